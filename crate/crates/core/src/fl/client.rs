use rand::seq::SliceRandom;

use crate::arch::{Mode, Model, StateDict};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fl::aggregate::ClientUpdate;
use crate::optim::{agc_clip, AgcConfig, LocalOptimizer, LrSchedule};
use crate::rng;
use crate::tensor::Tensor;

/// Everything a local training pass needs besides the client itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConfig {
    pub batch_size: usize,
    /// Local epochs per call.
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub agc: Option<AgcConfig>,
    /// Proximal coefficient; 0 disables the term.
    pub prox_mu: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalStats {
    /// Sum over batches of mean batch loss times batch size.
    pub loss_sum: f64,
    pub samples: usize,
    pub steps: u64,
}

impl LocalStats {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.samples as f64
    }
}

/// A simulated client. Its optimizer lives as long as the client does and is
/// never reset or shared.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    /// Training indices in ascending order (own data, then any shared pool).
    pub indices: Vec<usize>,
    pub model: Model,
    pub optimizer: LocalOptimizer,
    pub epochs_done: u64,
}

impl ClientState {
    pub fn new(client_id: usize, mut indices: Vec<usize>, model: Model, optimizer: LocalOptimizer) -> Self {
        indices.sort_unstable();
        ClientState {
            client_id,
            indices,
            model,
            optimizer,
            epochs_done: 0,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.indices.len()
    }

    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.indices.len().div_ceil(batch_size)
    }

    /// Seeded visiting order for the client's next epoch.
    fn epoch_order(&self, seed: u64) -> Vec<usize> {
        let mut order = self.indices.clone();
        let mut r = rng::stream(seed, &[rng::STREAM_EPOCH, self.client_id as u64, self.epochs_done]);
        order.shuffle(&mut r);
        order
    }

    /// Runs `cfg.epochs` epochs of mini-batch training. With `anchor`, each
    /// parameter gradient gains `prox_mu * (w - anchor)`.
    pub fn train(&mut self, data: &Dataset, cfg: &LocalConfig, anchor: Option<&[Tensor]>) -> Result<LocalStats> {
        if self.indices.is_empty() {
            return Err(Error::Dataset(format!("client {} has no training data", self.client_id)));
        }
        if cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let spe = self.steps_per_epoch(cfg.batch_size);
        let spec = self.model.spec().clone();
        let mut stats = LocalStats::default();
        for _ in 0..cfg.epochs {
            let order = self.epoch_order(cfg.seed);
            for batch in order.chunks(cfg.batch_size) {
                let (x, y) = data.batch(batch)?;
                let mut g = Graph::new();
                let xv = g.input(x);
                let out = self.model.forward(&mut g, xv, Mode::Train)?;
                let loss = g.softmax_cross_entropy(out.logits, &y)?;
                let mut grads = g.backward(loss)?;
                let mut gs: Vec<Tensor> = out
                    .params
                    .iter()
                    .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(g.value(v))))
                    .collect();
                if let (Some(anchor), true) = (anchor, cfg.prox_mu != 0.0) {
                    for ((gr, w), a) in gs.iter_mut().zip(self.model.params()).zip(anchor) {
                        gr.axpy(cfg.prox_mu, w);
                        gr.axpy(-cfg.prox_mu, a);
                    }
                }
                if let Some(agc) = &cfg.agc {
                    agc_clip(self.model.params(), &mut gs, agc, |i| spec.is_head(i));
                }
                let lr = cfg.schedule.lr_at(self.optimizer.steps(), spe);
                self.optimizer.step(self.model.params_mut(), &gs, lr)?;
                stats.loss_sum += g.value(loss).item() * batch.len() as f64;
                stats.samples += batch.len();
                stats.steps += 1;
            }
            self.epochs_done += 1;
        }
        Ok(stats)
    }

    /// Loads the global weights (keeping local batch-norm entries when
    /// `keep_batch_norm`), trains, and returns the resulting weights.
    pub fn local_update(
        &mut self,
        global: &StateDict,
        data: &Dataset,
        cfg: &LocalConfig,
        keep_batch_norm: bool,
    ) -> Result<(ClientUpdate, LocalStats)> {
        self.model.load_state_dict(global, keep_batch_norm)?;
        let anchor: Option<Vec<Tensor>> = (cfg.prox_mu != 0.0).then(|| self.model.params().to_vec());
        let stats = self.train(data, cfg, anchor.as_deref())?;
        let update = ClientUpdate {
            client_id: self.client_id,
            num_samples: self.num_samples(),
            state: self.model.state_dict(),
        };
        Ok((update, stats))
    }
}
