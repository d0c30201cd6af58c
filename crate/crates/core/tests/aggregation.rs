use fedconv_core::arch::{ArchConfig, BlockKind, EntryKind, Model, NormKind, NormPlacement, StateDict, StateEntry};
use fedconv_core::data::{partition_iid, synth_dataset, Split};
use fedconv_core::fl::{
    aggregate_fedavg, aggregate_fedbn, yogi_server_step, ClientUpdate, Federation, FlMethod, FlSettings, LocalConfig,
    YogiConfig, YogiState,
};
use fedconv_core::optim::{AdamWHyper, LrSchedule, OptimizerRule};
use fedconv_core::Tensor;
use proptest::prelude::*;

fn dict(values: &[f64], bn: bool) -> StateDict {
    StateDict {
        entries: vec![
            StateEntry {
                name: "conv.weight".into(),
                kind: EntryKind::Param,
                batch_norm: false,
                tensor: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
            },
            StateEntry {
                name: "bn.running_mean".into(),
                kind: EntryKind::Buffer,
                batch_norm: bn,
                tensor: Tensor::new(vec![1], vec![values[0] * 2.0]).unwrap(),
            },
        ],
    }
}

fn update(id: usize, n: usize, values: &[f64]) -> ClientUpdate {
    ClientUpdate {
        client_id: id,
        num_samples: n,
        state: dict(values, true),
    }
}

proptest! {
    #[test]
    fn fedavg_ignores_arrival_order(
        vals in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..6),
        sizes in prop::collection::vec(1usize..50, 6),
        rot in 0usize..6,
    ) {
        let updates: Vec<ClientUpdate> = vals.iter().enumerate().map(|(i, v)| update(i, sizes[i], v)).collect();
        let mut shuffled = updates.clone();
        shuffled.rotate_left(rot % updates.len());
        shuffled.reverse();
        let a = aggregate_fedavg(&updates).unwrap();
        let b = aggregate_fedavg(&shuffled).unwrap();
        prop_assert!(a.bits_eq(&b));
    }

    #[test]
    fn fedavg_of_equal_states_is_that_state(v in prop::collection::vec(-5.0f64..5.0, 3), k in 1usize..6) {
        let updates: Vec<ClientUpdate> = (0..k).map(|i| update(i, 3 + i, &v)).collect();
        let avg = aggregate_fedavg(&updates).unwrap();
        prop_assert!(avg.max_abs_diff(&updates[0].state) <= 1e-14);
    }

    #[test]
    fn yogi_second_moment_stays_positive(
        deltas in prop::collection::vec(-1.0f64..1.0, 1..20),
        tau in 1e-4f64..0.5,
    ) {
        let cfg = YogiConfig { tau, ..YogiConfig::default() };
        let mut state = YogiState::default();
        let mut global = dict(&[0.5, -0.5, 1.0], false);
        for d in deltas {
            let mut client = global.clone();
            client.entries[0].tensor.data_mut().iter_mut().for_each(|x| *x += d);
            let u = ClientUpdate { client_id: 0, num_samples: 1, state: client };
            global = yogi_server_step(&mut state, &cfg, &global, &[u]).unwrap();
            prop_assert!(state.v[0].data().iter().all(|&v| v > 0.0));
            prop_assert!(global.entries[0].tensor.is_finite());
        }
    }
}

#[test]
fn fedavg_weights_by_sample_count() {
    let a = update(0, 1, &[0.0, 0.0, 0.0]);
    let b = update(1, 3, &[4.0, 8.0, -4.0]);
    let avg = aggregate_fedavg(&[b, a]).unwrap();
    assert_eq!(avg.entries[0].tensor.data(), &[3.0, 6.0, -3.0]);
}

#[test]
fn fedbn_keeps_global_batch_norm_entries() {
    let global = dict(&[9.0, 9.0, 9.0], true);
    let updates = [update(0, 1, &[1.0, 2.0, 3.0]), update(1, 1, &[3.0, 2.0, 1.0])];
    let out = aggregate_fedbn(&updates, &global).unwrap();
    assert_eq!(out.entries[0].tensor.data(), &[2.0, 2.0, 2.0]);
    assert_eq!(out.entries[1].tensor.data(), &[18.0]);
}

#[test]
fn yogi_averages_buffers_and_moves_params() {
    let global = dict(&[0.0, 0.0, 0.0], true);
    let updates = [update(0, 1, &[1.0, 1.0, 1.0]), update(1, 1, &[3.0, 3.0, 3.0])];
    let mut state = YogiState::default();
    let out = yogi_server_step(&mut state, &YogiConfig::default(), &global, &updates).unwrap();
    assert_eq!(out.entries[1].tensor.data(), &[4.0]);
    assert!(out.entries[0].tensor.data().iter().all(|&w| w > 0.0));
    assert_eq!(state.steps, 1);
}

#[test]
fn mismatched_registries_are_rejected() {
    let mut other = update(1, 1, &[1.0, 2.0]);
    other.state.entries[0].name = "other".into();
    let err = aggregate_fedavg(&[update(0, 1, &[1.0, 2.0]), other]).unwrap_err();
    assert!(err.to_string().contains("registry mismatch"), "{err}");
    assert!(aggregate_fedavg(&[]).is_err());
    assert!(aggregate_fedavg(&[update(2, 1, &[1.0]), update(2, 1, &[1.0])]).is_err());
}

fn small_settings(method: FlMethod, clients_per_round: Option<usize>) -> FlSettings {
    FlSettings {
        method,
        rounds: 2,
        clients_per_round,
        local: LocalConfig {
            batch_size: 8,
            epochs: 1,
            schedule: LrSchedule {
                base_lr: 1e-3,
                warmup_epochs: 0,
                total_epochs: 2,
            },
            agc: None,
            prox_mu: 0.0,
            seed: 4,
        },
        target_accuracy: None,
        stop_at_target: false,
    }
}

#[test]
fn client_sampling_is_seeded_and_sorted() {
    let train = synth_dataset(0, 4, 10, 32, Split::Train).unwrap();
    let test = synth_dataset(0, 4, 2, 32, Split::Test).unwrap();
    let part = partition_iid(train.labels(), 4, 5, 0).unwrap();
    let arch = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
    let rule = OptimizerRule::AdamW(AdamWHyper::with_weight_decay(0.05));
    let fed = Federation::new(&arch, &part, &train, &test, rule, small_settings(FlMethod::FedAvg {}, Some(2))).unwrap();
    let picks: Vec<Vec<usize>> = (1..=8).map(|r| fed.select(r)).collect();
    for p in &picks {
        assert_eq!(p.len(), 2);
        assert!(p[0] < p[1] && p[1] < 5);
    }
    assert!(picks.windows(2).any(|w| w[0] != w[1]));
    assert_eq!(picks[3], fed.select(4));
    assert!(Federation::new(&arch, &part, &train, &test, rule, small_settings(FlMethod::FedAvg {}, Some(6))).is_err());
}

#[test]
fn fedbn_clients_keep_their_own_batch_norm() {
    let train = synth_dataset(1, 4, 10, 32, Split::Train).unwrap();
    let test = synth_dataset(1, 4, 2, 32, Split::Test).unwrap();
    let part = partition_iid(train.labels(), 4, 2, 1).unwrap();
    let arch = ArchConfig {
        norm_kind: NormKind::BatchNorm,
        norm_placement: NormPlacement::All,
        ..ArchConfig::fedconv_tiny(BlockKind::Normal, 4)
    };
    let rule = OptimizerRule::AdamW(AdamWHyper::with_weight_decay(0.0));
    let mut fed = Federation::new(&arch, &part, &train, &test, rule, small_settings(FlMethod::FedBn {}, None)).unwrap();
    fed.run(|_, _| {}).unwrap();
    let init = Model::new(&arch, 4).unwrap().state_dict();
    let server = fed.server.model.state_dict();
    let c0 = fed.clients[0].model.state_dict();
    let c1 = fed.clients[1].model.state_dict();
    for (i, e) in server.entries.iter().enumerate() {
        if e.batch_norm {
            // the server never aggregates batch-norm entries
            assert!(e.tensor.bits_eq(&init.entries[i].tensor), "{}", e.name);
            if e.kind == EntryKind::Buffer && e.name.ends_with("running_mean") {
                assert!(!c0.entries[i].tensor.bits_eq(&c1.entries[i].tensor), "{}", e.name);
            }
        }
    }
}

#[test]
fn share_adds_the_pool_to_every_client() {
    let train = synth_dataset(2, 4, 25, 32, Split::Train).unwrap();
    let test = synth_dataset(2, 4, 2, 32, Split::Test).unwrap();
    let part = partition_iid(train.labels(), 4, 4, 2).unwrap();
    let arch = ArchConfig::fedconv_tiny(BlockKind::InvertUp, 4);
    let rule = OptimizerRule::Sgd { momentum: 0.9 };
    let fed = Federation::new(&arch, &part, &train, &test, rule, small_settings(FlMethod::Share { fraction: 0.2 }, None))
        .unwrap();
    // 25 per client, ceil(0.2 * 25) = 5 from each -> pool of 20
    assert!(fed.clients.iter().all(|c| c.num_samples() == 45));
}
