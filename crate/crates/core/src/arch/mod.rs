//! Declarative model construction for every block, stem, activation and
//! normalization variant, plus FLOPs and parameter counting.

pub mod config;
pub mod flops;
pub mod model;
pub mod state;
pub mod stats;

pub use config::{ActPlacement, ArchConfig, BlockKind, NormKind, NormPlacement, StemKind};
pub use flops::{calibrate_depths, count_flops, count_params};
pub use model::{BlockSpec, ForwardOutput, Layer, Mode, Model, ModelSpec, ParamInfo, ParamRole};
pub use state::{EntryKind, StateDict, StateEntry};
pub use stats::{gaussian_activation_mean, mean_activation_stat, ActivationStats};
