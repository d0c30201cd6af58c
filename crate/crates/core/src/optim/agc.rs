//! Adaptive gradient clipping: each unit's gradient norm is capped at
//! `clipping * max(||w||, eps)`, where a unit is one output row of a weight
//! with rank >= 2 and the whole tensor otherwise.

use serde::{Deserialize, Serialize};

use crate::tensor::{l2, Tensor};

pub const DEFAULT_CLIPPING: f64 = 0.01;
pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgcConfig {
    pub clipping: f64,
    pub eps: f64,
}

impl Default for AgcConfig {
    fn default() -> Self {
        AgcConfig {
            clipping: DEFAULT_CLIPPING,
            eps: DEFAULT_EPS,
        }
    }
}

fn unit_len(t: &Tensor) -> usize {
    if t.rank() >= 2 && t.shape()[0] > 0 {
        t.numel() / t.shape()[0]
    } else {
        t.numel().max(1)
    }
}

/// `||g_i|| / max(||w_i||, eps)` for every unit of one tensor.
pub fn unit_ratios(param: &Tensor, grad: &Tensor, eps: f64) -> Vec<f64> {
    let n = unit_len(param);
    param
        .data()
        .chunks(n)
        .zip(grad.data().chunks(n))
        .map(|(w, g)| l2(g) / l2(w).max(eps))
        .collect()
}

/// Clips one gradient tensor in place.
pub fn clip_tensor(param: &Tensor, grad: &mut Tensor, cfg: &AgcConfig) {
    let n = unit_len(param);
    // units already within a relative 1e-12 of the cap are left alone so a
    // second pass never rescales
    let cap_ratio = cfg.clipping * (1.0 + 1e-12);
    for (w, g) in param.data().chunks(n).zip(grad.data_mut().chunks_mut(n)) {
        let w_norm = l2(w).max(cfg.eps);
        let g_norm = l2(g);
        if g_norm / w_norm > cap_ratio {
            let s = cfg.clipping * w_norm / g_norm;
            for v in g {
                *v *= s;
            }
        }
    }
}

/// Clips every gradient whose index is not excluded by `skip`.
pub fn agc_clip(params: &[Tensor], grads: &mut [Tensor], cfg: &AgcConfig, skip: impl Fn(usize) -> bool) {
    for (i, (p, g)) in params.iter().zip(grads.iter_mut()).enumerate() {
        if !skip(i) {
            clip_tensor(p, g, cfg);
        }
    }
}
