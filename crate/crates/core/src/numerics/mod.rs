//! Dense tensors, reverse-mode differentiation, layers and the optimizer.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
mod params;
pub mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradReport};
pub use graph::{Gradients, Graph, Var};
pub use init::{kaiming_init, zero_init};
pub use layers::{Activation, LayerNormLayer, LinearLayer};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use rng::{seeded, Rng, RngState};
pub use scalar::{axpy, dot, Scalar};
pub use tensor::Tensor;
