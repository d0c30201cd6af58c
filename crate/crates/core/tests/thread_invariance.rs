//! Results must not depend on the size of the worker pool.
#![cfg(feature = "parallel")]

use fedconv_core::arch::{ArchConfig, BlockKind, StateDict};
use fedconv_core::autodiff::{Conv2dParams, Graph};
use fedconv_core::data::{partition_label_skew, synth_dataset, Split};
use fedconv_core::fl::{Federation, FlMethod, FlSettings, LocalConfig, YogiConfig};
use fedconv_core::optim::{AdamWHyper, AgcConfig, LrSchedule, OptimizerRule};
use fedconv_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv_grads(x: &Tensor, w: &Tensor, p: Conv2dParams) -> Vec<Tensor> {
    let mut g = Graph::new();
    let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
    let y = g.conv2d(xv, wv, None, p).unwrap();
    let weights = Tensor::full(g.value(y).shape(), 0.5);
    let loss = g.weighted_sum(y, weights).unwrap();
    let grads = g.backward(loss).unwrap();
    vec![g.value(y).clone(), grads.get(xv).unwrap().clone(), grads.get(wv).unwrap().clone()]
}

#[test]
fn conv_is_bitwise_stable_across_pools() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for (cin, cout, k, p) in [
        (6, 6, 9, Conv2dParams::new(1, 4, 6)),
        (4, 8, 1, Conv2dParams::new(1, 0, 1)),
        (4, 6, 3, Conv2dParams::new(2, 1, 2)),
    ] {
        let x = rand_tensor(&mut r, &[5, cin, 11, 11]);
        let w = rand_tensor(&mut r, &[cout, cin / p.groups, k, k]);
        let a = with_threads(1, || conv_grads(&x, &w, p));
        let b = with_threads(4, || conv_grads(&x, &w, p));
        for (u, v) in a.iter().zip(&b) {
            assert!(u.bits_eq(v));
        }
    }
}

fn federated_state(threads: usize, method: FlMethod) -> StateDict {
    with_threads(threads, || {
        let train = synth_dataset(6, 4, 16, 32, Split::Train).unwrap();
        let test = synth_dataset(6, 4, 4, 32, Split::Test).unwrap();
        let part = partition_label_skew(train.labels(), 4, 4, 0.5, 0.1, 6).unwrap();
        let settings = FlSettings {
            method,
            rounds: 2,
            clients_per_round: Some(3),
            local: LocalConfig {
                batch_size: 8,
                epochs: 1,
                schedule: LrSchedule {
                    base_lr: 2e-3,
                    warmup_epochs: 1,
                    total_epochs: 2,
                },
                agc: Some(AgcConfig::default()),
                prox_mu: 0.0,
                seed: 6,
            },
            target_accuracy: None,
            stop_at_target: false,
        };
        let arch = ArchConfig::fedconv_tiny(BlockKind::Normal, 4);
        let rule = OptimizerRule::AdamW(AdamWHyper::with_weight_decay(0.05));
        let mut fed = Federation::new(&arch, &part, &train, &test, rule, settings).unwrap();
        fed.run(|_, _| {}).unwrap();
        fed.server.model.state_dict()
    })
}

#[test]
fn federated_rounds_are_bitwise_stable_across_pools() {
    for method in [
        FlMethod::FedProx { mu: 0.01 },
        FlMethod::FedYogi(YogiConfig::default()),
    ] {
        let a = federated_state(1, method);
        let b = federated_state(3, method);
        assert!(a.bits_eq(&b), "{}", method.name());
    }
}
