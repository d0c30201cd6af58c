use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Server-side Yogi constants; `eta_client` replaces the clients' base
/// learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YogiConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    pub eta_client: f64,
    #[serde(default = "default_eta_server")]
    pub eta_server: f64,
}

fn default_eta_server() -> f64 {
    1.0
}

impl Default for YogiConfig {
    fn default() -> Self {
        YogiConfig {
            beta1: 0.9,
            beta2: 0.99,
            tau: 5e-2,
            eta_client: 0.01,
            eta_server: default_eta_server(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FlMethod {
    FedAvg {},
    FedProx { mu: f64 },
    Share { fraction: f64 },
    FedYogi(YogiConfig),
    FedBn {},
}

impl FlMethod {
    pub fn name(&self) -> &'static str {
        match self {
            FlMethod::FedAvg {} => "fedavg",
            FlMethod::FedProx { .. } => "fedprox",
            FlMethod::Share { .. } => "share",
            FlMethod::FedYogi(_) => "fedyogi",
            FlMethod::FedBn {} => "fedbn",
        }
    }

    pub fn prox_mu(&self) -> f64 {
        match self {
            FlMethod::FedProx { mu } => *mu,
            _ => 0.0,
        }
    }

    /// Whether clients keep their own batch-norm entries.
    pub fn keeps_batch_norm(&self) -> bool {
        matches!(self, FlMethod::FedBn {})
    }

    /// Checks the method constants; errors name the offending field under
    /// `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(format!("{prefix}.{field}"), reason));
        match *self {
            FlMethod::FedProx { mu } if !(mu >= 0.0 && mu.is_finite()) => {
                bad("mu", format!("must be finite and >= 0, got {mu}"))
            }
            FlMethod::Share { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                bad("fraction", format!("must lie in (0, 1), got {fraction}"))
            }
            FlMethod::FedYogi(y) => {
                if !(y.tau > 0.0) {
                    return bad("tau", format!("must be positive, got {}", y.tau));
                }
                for (name, b) in [("beta1", y.beta1), ("beta2", y.beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return bad(name, format!("must lie in [0, 1), got {b}"));
                    }
                }
                if !(y.eta_client > 0.0) {
                    return bad("eta_client", format!("must be positive, got {}", y.eta_client));
                }
                if !(y.eta_server > 0.0) {
                    return bad("eta_server", format!("must be positive, got {}", y.eta_server));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
