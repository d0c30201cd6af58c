use rand::seq::index::sample;
use std::time::Instant;

use crate::arch::{ArchConfig, Model};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::fl::aggregate::{aggregate_fedavg, aggregate_fedbn, yogi_server_step, ClientUpdate, YogiState};
use crate::fl::client::{ClientState, LocalConfig, LocalStats};
use crate::fl::method::FlMethod;
use crate::fl::share::build_shared_pool;
use crate::metrics::{evaluate, RoundRecord};
use crate::optim::OptimizerRule;
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct FlSettings {
    pub method: FlMethod,
    pub rounds: usize,
    /// Clients sampled per round; `None` means all of them.
    pub clients_per_round: Option<usize>,
    pub local: LocalConfig,
    pub target_accuracy: Option<f64>,
    /// End the run at the first round reaching `target_accuracy`.
    pub stop_at_target: bool,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: Model,
    pub yogi: YogiState,
    pub round: usize,
}

/// A server plus its clients, sharing one training set.
pub struct Federation<'a> {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub settings: FlSettings,
    train: &'a Dataset,
    test: &'a Dataset,
}

impl<'a> Federation<'a> {
    /// `partition` must be disjoint; under Share the pool is added here.
    pub fn new(
        arch: &ArchConfig,
        partition: &Partition,
        train: &'a Dataset,
        test: &'a Dataset,
        optimizer: OptimizerRule,
        mut settings: FlSettings,
    ) -> Result<Self> {
        partition.validate(train.len(), true)?;
        if let Some(m) = settings.clients_per_round {
            if m == 0 || m > partition.num_clients {
                return Err(Error::InvalidArgument(format!(
                    "clients_per_round {m} outside 1..={}",
                    partition.num_clients
                )));
            }
        }
        let partition = match settings.method {
            FlMethod::Share { fraction } => build_shared_pool(partition, fraction, settings.local.seed)?,
            _ => partition.clone(),
        };
        if let FlMethod::FedYogi(y) = settings.method {
            settings.local.schedule.base_lr = y.eta_client;
        }
        settings.local.prox_mu = settings.method.prox_mu();
        let global = Model::new(arch, settings.local.seed)?;
        let clients = partition
            .clients
            .iter()
            .map(|c| ClientState::new(c.client_id, c.indices.clone(), global.clone(), optimizer.build()))
            .collect();
        Ok(Federation {
            server: ServerState {
                model: global,
                yogi: YogiState::default(),
                round: 0,
            },
            clients,
            settings,
            train,
            test,
        })
    }

    pub fn evaluate(&mut self) -> Result<f64> {
        evaluate(&mut self.server.model, self.test)
    }

    /// Client ids taking part in `round`, ascending.
    pub fn select(&self, round: usize) -> Vec<usize> {
        let n = self.clients.len();
        match self.settings.clients_per_round {
            Some(m) if m < n => {
                let mut r = rng::stream(self.settings.local.seed, &[rng::STREAM_SAMPLING, round as u64]);
                let mut ids = sample(&mut r, n, m).into_vec();
                ids.sort_unstable();
                ids
            }
            _ => (0..n).collect(),
        }
    }

    /// Broadcast, parallel local updates, aggregation, evaluation.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let start = Instant::now();
        self.server.round += 1;
        let round = self.server.round;
        let selected = self.select(round);
        let global = self.server.model.state_dict();
        let method = self.settings.method;
        let keep_bn = method.keeps_batch_norm();
        let (train, local) = (self.train, &self.settings.local);
        let mut chosen: Vec<&mut ClientState> = self
            .clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.client_id).is_ok())
            .collect();
        let results = par::map_mut(&mut chosen, |c| c.local_update(&global, train, local, keep_bn));
        let (updates, stats): (Vec<ClientUpdate>, Vec<LocalStats>) =
            results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        let next = match method {
            FlMethod::FedAvg {} | FlMethod::FedProx { .. } | FlMethod::Share { .. } => aggregate_fedavg(&updates)?,
            FlMethod::FedBn {} => aggregate_fedbn(&updates, &global)?,
            FlMethod::FedYogi(y) => yogi_server_step(&mut self.server.yogi, &y, &global, &updates)?,
        };
        self.server.model.load_state_dict(&next, false)?;
        let accuracy = self.evaluate()?;
        let loss_sum: f64 = stats.iter().map(|s| s.loss_sum).sum();
        let samples: usize = stats.iter().map(|s| s.samples).sum();
        Ok(RoundRecord {
            round,
            accuracy,
            loss: Some(loss_sum / samples as f64),
            seconds: start.elapsed().as_secs_f64(),
            client_samples: updates.iter().map(|u| u.num_samples).collect(),
        })
    }

    /// Round-0 evaluation followed by up to `settings.rounds` rounds.
    /// `observe` sees the federation after every record.
    pub fn run(&mut self, mut observe: impl FnMut(&Federation<'a>, &RoundRecord)) -> Result<Vec<RoundRecord>> {
        let start = Instant::now();
        let accuracy = self.evaluate()?;
        let first = RoundRecord {
            round: 0,
            accuracy,
            loss: None,
            seconds: start.elapsed().as_secs_f64(),
            client_samples: Vec::new(),
        };
        observe(self, &first);
        let mut records = vec![first];
        for _ in 0..self.settings.rounds {
            let rec = self.run_round()?;
            observe(self, &rec);
            let hit = self.settings.target_accuracy.is_some_and(|t| rec.accuracy >= t);
            records.push(rec);
            if hit && self.settings.stop_at_target {
                break;
            }
        }
        Ok(records)
    }
}

/// Trains one model on every training sample, one record per epoch. Uses
/// the same client trainer as the federated path, as client 0.
pub fn run_central(
    arch: &ArchConfig,
    train: &Dataset,
    test: &Dataset,
    optimizer: OptimizerRule,
    local: &LocalConfig,
    epochs: usize,
    mut observe: impl FnMut(&ClientState, &RoundRecord),
) -> Result<(ClientState, Vec<RoundRecord>)> {
    let model = Model::new(arch, local.seed)?;
    let mut trainer = ClientState::new(0, train.all_indices(), model, optimizer.build());
    let cfg = LocalConfig {
        epochs: 1,
        prox_mu: 0.0,
        ..local.clone()
    };
    let start = Instant::now();
    let first = RoundRecord {
        round: 0,
        accuracy: evaluate(&mut trainer.model, test)?,
        loss: None,
        seconds: start.elapsed().as_secs_f64(),
        client_samples: Vec::new(),
    };
    observe(&trainer, &first);
    let mut records = vec![first];
    for epoch in 1..=epochs {
        let start = Instant::now();
        let stats = trainer.train(train, &cfg, None)?;
        let rec = RoundRecord {
            round: epoch,
            accuracy: evaluate(&mut trainer.model, test)?,
            loss: Some(stats.mean_loss()),
            seconds: start.elapsed().as_secs_f64(),
            client_samples: vec![stats.samples],
        };
        observe(&trainer, &rec);
        records.push(rec);
    }
    Ok((trainer, records))
}
