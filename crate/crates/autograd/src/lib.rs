//! Minimal dense-tensor library with reverse-mode automatic differentiation.
//!
//! Everything is double precision and CPU only. The operator set is the one a
//! small graph-convolution + transformer model needs; see [`Graph`] for the
//! list.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::{adamw_step, sgd_momentum_step, AdamWConfig, OptimState};
pub use params::{Gradients, Param, ParamStore};
pub use schedule::{finetune_lr, pretrain_lr};
pub use tensor::Tensor;
