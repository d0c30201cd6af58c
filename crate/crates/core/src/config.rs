//! Experiment configuration, read from TOML. Unknown keys are rejected and
//! the only defaults are the ones marked below.
//!
//! ```toml
//! seed = 0
//! target_accuracy = 85.0          # optional
//! stop_at_target = false          # optional, default false
//! output_dir = "runs/tiny"        # optional, overridden by --out
//!
//! [arch]                          # every field required
//! stem = "conv"
//! block = "invert_up"
//! channels = [8, 16, 32, 64]
//! depths = [1, 1, 2, 1]
//! kernel_size = 9
//! activation = "silu"
//! act_placement = "act2"
//! norm_placement = "no_norm"
//! norm_kind = "none"
//! num_classes = 4
//! input_resolution = 32
//!
//! [fl]
//! rounds = 10
//! local_epochs = 1
//! clients_per_round = 5           # optional, default all clients
//! method = { kind = "fedavg" }    # fedprox{mu} share{fraction} fedbn
//!                                 # fedyogi{beta1,beta2,tau,eta_client,eta_server=1.0}
//!
//! [optimizer]
//! batch_size = 32
//! base_lr = 1e-3
//! warmup_epochs = 0
//! rule = { kind = "adamw", weight_decay = 0.05 }   # beta1=0.9 beta2=0.999 eps=1e-8
//! # rule = { kind = "sgd", momentum = 0.9 }
//! agc = { clipping = 0.01, eps = 1e-3 }            # optional
//!
//! [data]
//! num_clients = 5
//! source = { kind = "synthetic", num_classes = 4, per_class = 250, test_per_class = 100, resolution = 32 }
//! # source = { kind = "cifar10", path = "/data/cifar-10-batches-bin" }
//! partition = { kind = "label_skew", target_ks = 0.5, tolerance = 0.05 }
//! # partition = { kind = "iid" } | { kind = "file", path = "partition.json" }
//! ```

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::fl::FlMethod;
use crate::optim::{AgcConfig, OptimizerRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub method: FlMethod,
    pub rounds: usize,
    pub local_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rule: OptimizerRule,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agc: Option<AgcConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        num_classes: usize,
        per_class: usize,
        test_per_class: usize,
        resolution: usize,
    },
    Cifar10 {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Iid {},
    LabelSkew { target_ks: f64, tolerance: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub partition: PartitionSpec,
    pub num_clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub stop_at_target: bool,
    pub arch: ArchConfig,
    pub fl: FlConfig,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| format!("line {}", line_of(text, s.start))).unwrap_or_else(|| "document".into());
            Error::config(at, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("document", e.to_string()))
    }

    /// Every problem found, as `(path, reason)`.
    pub fn issues(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push_err = |e: Error| match e {
            Error::Config { path, reason } => out.push((path, reason)),
            other => out.push(("document".into(), other.to_string())),
        };
        if let Err(e) = self.arch.validate() {
            push_err(e);
        }
        if let Err(e) = self.fl.method.validate("fl.method") {
            push_err(e);
        }
        let mut bad = |path: &str, reason: String| out.push((path.to_string(), reason));
        if let Some(t) = self.target_accuracy {
            if !(0.0..=100.0).contains(&t) {
                bad("target_accuracy", format!("must lie in [0, 100], got {t}"));
            }
        }
        if self.stop_at_target && self.target_accuracy.is_none() {
            bad("stop_at_target", "requires target_accuracy".into());
        }
        if self.fl.local_epochs == 0 {
            bad("fl.local_epochs", "must be at least 1".into());
        }
        if let Some(m) = self.fl.clients_per_round {
            if m == 0 || m > self.data.num_clients {
                bad(
                    "fl.clients_per_round",
                    format!("must lie in 1..={}, got {m}", self.data.num_clients),
                );
            }
        }
        let o = &self.optimizer;
        if o.batch_size == 0 {
            bad("optimizer.batch_size", "must be at least 1".into());
        }
        if !(o.base_lr >= 0.0 && o.base_lr.is_finite()) {
            bad("optimizer.base_lr", format!("must be finite and >= 0, got {}", o.base_lr));
        }
        match o.rule {
            OptimizerRule::AdamW(h) => {
                if !(0.0..1.0).contains(&h.beta1) {
                    bad("optimizer.rule.beta1", format!("must lie in [0, 1), got {}", h.beta1));
                }
                if !(0.0..1.0).contains(&h.beta2) {
                    bad("optimizer.rule.beta2", format!("must lie in [0, 1), got {}", h.beta2));
                }
                if !(h.eps > 0.0) {
                    bad("optimizer.rule.eps", format!("must be positive, got {}", h.eps));
                }
                if !(h.weight_decay >= 0.0) {
                    bad("optimizer.rule.weight_decay", format!("must be >= 0, got {}", h.weight_decay));
                }
            }
            OptimizerRule::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    bad("optimizer.rule.momentum", format!("must lie in [0, 1), got {momentum}"));
                }
            }
        }
        if let Some(a) = o.agc {
            if !(a.clipping > 0.0) {
                bad("optimizer.agc.clipping", format!("must be positive, got {}", a.clipping));
            }
            if !(a.eps > 0.0) {
                bad("optimizer.agc.eps", format!("must be positive, got {}", a.eps));
            }
        }
        let d = &self.data;
        if d.num_clients == 0 {
            bad("data.num_clients", "must be at least 1".into());
        }
        match &d.source {
            DataSource::Synthetic {
                num_classes,
                per_class,
                test_per_class,
                resolution,
            } => {
                if *num_classes != self.arch.num_classes {
                    bad(
                        "data.source.num_classes",
                        format!("{num_classes} differs from arch.num_classes {}", self.arch.num_classes),
                    );
                }
                if *resolution != self.arch.input_resolution {
                    bad(
                        "data.source.resolution",
                        format!("{resolution} differs from arch.input_resolution {}", self.arch.input_resolution),
                    );
                }
                if *per_class == 0 || *test_per_class == 0 {
                    bad("data.source.per_class", "per_class and test_per_class must be at least 1".into());
                } else if num_classes * per_class < d.num_clients {
                    bad(
                        "data.num_clients",
                        format!("{} training samples cannot feed {} clients", num_classes * per_class, d.num_clients),
                    );
                }
            }
            DataSource::Cifar10 { .. } => {
                if self.arch.num_classes != 10 {
                    bad("arch.num_classes", format!("CIFAR-10 has 10 classes, got {}", self.arch.num_classes));
                }
                if self.arch.input_resolution != 32 {
                    bad(
                        "arch.input_resolution",
                        format!("CIFAR-10 images are 32x32, got {}", self.arch.input_resolution),
                    );
                }
            }
        }
        if let PartitionSpec::LabelSkew { target_ks, tolerance } = d.partition {
            if !(0.0..=1.0).contains(&target_ks) {
                bad("data.partition.target_ks", format!("must lie in [0, 1], got {target_ks}"));
            }
            if !(tolerance > 0.0) {
                bad("data.partition.tolerance", format!("must be positive, got {tolerance}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = self.issues();
        match issues.len() {
            0 => Ok(()),
            1 => {
                let (path, reason) = issues.remove(0);
                Err(Error::Config { path, reason })
            }
            _ => Err(Error::ConfigIssues(issues)),
        }
    }

    /// Total local epochs each client runs, which is also the epoch count of
    /// the centralized baseline.
    pub fn total_epochs(&self) -> usize {
        self.fl.rounds * self.fl.local_epochs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
seed = 7
target_accuracy = 85.0

[arch]
stem = "conv"
block = "invert_up"
channels = [8, 16, 32, 64]
depths = [1, 1, 2, 1]
kernel_size = 9
activation = "silu"
act_placement = "act2"
norm_placement = "no_norm"
norm_kind = "none"
num_classes = 4
input_resolution = 32

[fl]
rounds = 3
local_epochs = 1
method = { kind = "fedyogi", beta1 = 0.9, beta2 = 0.99, tau = 0.05, eta_client = 0.01 }

[optimizer]
batch_size = 16
base_lr = 1e-3
warmup_epochs = 0
rule = { kind = "adamw", weight_decay = 0.05 }
agc = { clipping = 0.01, eps = 1e-3 }

[data]
num_clients = 3
source = { kind = "synthetic", num_classes = 4, per_class = 20, test_per_class = 5, resolution = 32 }
partition = { kind = "label_skew", target_ks = 0.5, tolerance = 0.05 }
"#;

    #[test]
    fn sample_parses_and_roundtrips() {
        let c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.total_epochs(), 3);
        let again = ExperimentConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = SAMPLE.replace("rounds = 3", "rounds = 3\nround_count = 4");
        let e = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(e.contains("unknown field `round_count`"), "{e}");
        assert!(e.contains("line "), "{e}");
    }

    #[test]
    fn every_issue_is_reported_with_its_path() {
        let text = SAMPLE
            .replace("kernel_size = 9", "kernel_size = 4")
            .replace("batch_size = 16", "batch_size = 0")
            .replace("target_ks = 0.5", "target_ks = 1.5");
        let e = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        for p in ["arch.kernel_size", "optimizer.batch_size", "data.partition.target_ks"] {
            assert!(e.contains(p), "{p} missing from {e}");
        }
        assert!(!e.contains('\n'));
    }

    #[test]
    fn mismatched_classes_are_caught() {
        let text = SAMPLE.replace("num_classes = 4, per_class", "num_classes = 5, per_class");
        let e = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(e.contains("data.source.num_classes"), "{e}");
    }
}
