use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at the end of
/// `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, global_step: u64, steps_per_epoch: usize) -> f64 {
        let warmup = (self.warmup_epochs * steps_per_epoch) as f64;
        let total = (self.total_epochs * steps_per_epoch) as f64;
        let step = global_step as f64;
        if step < warmup {
            return self.base_lr * step / warmup;
        }
        if total <= warmup {
            return self.base_lr;
        }
        let progress = ((step - warmup) / (total - warmup)).min(1.0);
        0.5 * self.base_lr * (1.0 + (PI * progress).cos())
    }
}
