//! Federated-learning simulator and minimal differentiable CNN engine for
//! studying which micro-architecture choices make CNNs robust to label-skewed
//! clients.
//!
//! * [`autodiff`]: tensors and reverse-mode differentiation.
//! * [`arch`]: declarative model construction, FLOPs/parameter counting.
//! * [`optim`]: AdamW, SGD, adaptive gradient clipping, LR schedules.
//! * [`data`]: synthetic and CIFAR-10 datasets, label-skew partitions, KS.
//! * [`fl`]: client updates and FedAVG/FedProx/Share/FedYogi/FedBN rounds.
//! * [`metrics`]: evaluation, communication cost, reports, checkpoints.
//! * [`experiment`]: config-driven runners behind the CLI.

pub mod arch;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
