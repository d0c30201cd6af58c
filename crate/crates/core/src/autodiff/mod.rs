//! Minimal reverse-mode automatic differentiation with exactly the tensor
//! operations the CNN variants need.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod norm;
pub(crate) mod pool;

pub use activation::Activation;
pub use conv::{conv2d_forward, output_size, Conv2dParams};
pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, Var};
pub use norm::{BnMode, BN_MOMENTUM, NORM_EPS};
