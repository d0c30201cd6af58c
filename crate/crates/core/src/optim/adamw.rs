use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamWHyper {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        AdamWHyper {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay,
        }
    }
}

/// AdamW moments for one owner's parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub hyper: AdamWHyper,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(hyper: AdamWHyper) -> Self {
        AdamWState {
            hyper,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// One decoupled-weight-decay Adam step with bias-corrected moments.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(Tensor::zeros_like).collect();
            self.v = params.iter().map(Tensor::zeros_like).collect();
        } else if self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powf(self.t as f64);
        let bc2 = 1.0 - h.beta2.powf(self.t as f64);
        let decay = 1.0 - lr * h.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                p[i] *= decay;
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + h.eps);
            }
        }
        Ok(())
    }
}

pub(crate) fn check_grads(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {i} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    Ok(())
}
