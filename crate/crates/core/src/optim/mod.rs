//! Client optimizers, adaptive gradient clipping and learning-rate schedules.

pub mod adamw;
pub mod agc;
pub mod schedule;
pub mod sgd;

pub use adamw::{AdamWHyper, AdamWState};
pub use agc::{agc_clip, unit_ratios, AgcConfig};
pub use schedule::LrSchedule;
pub use sgd::SgdState;


use crate::error::Result;
use crate::tensor::Tensor;

/// Optimizer state owned by exactly one client (or the central trainer).
#[derive(Debug, Clone, PartialEq)]
pub enum LocalOptimizer {
    AdamW(AdamWState),
    Sgd(SgdState),
}

impl LocalOptimizer {
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        match self {
            LocalOptimizer::AdamW(s) => s.step(params, grads, lr),
            LocalOptimizer::Sgd(s) => s.step(params, grads, lr),
        }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        match self {
            LocalOptimizer::AdamW(s) => s.t,
            LocalOptimizer::Sgd(s) => s.t,
        }
    }
}

/// Serializable choice of client optimizer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerRule {
    AdamW(AdamWHyper),
    Sgd { momentum: f64 },
}

impl OptimizerRule {
    pub fn build(&self) -> LocalOptimizer {
        match *self {
            OptimizerRule::AdamW(h) => LocalOptimizer::AdamW(AdamWState::new(h)),
            OptimizerRule::Sgd { momentum } => LocalOptimizer::Sgd(SgdState::new(momentum)),
        }
    }
}
