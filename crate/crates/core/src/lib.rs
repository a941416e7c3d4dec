//! Point-cloud transformer with tokenizer-free patch embedding.
//!
//! The pipeline: normalize a cloud to `[-1, 1]`, pick `P` anchors with
//! farthest point sampling, group each anchor's `k` nearest neighbours,
//! embed every group with a small PointNet plus coordinate residual and
//! positional terms, then run a six-block pre-norm transformer that merges
//! adjacent tokens between blocks. Pooled features feed either a linear head
//! or the class-prototype zero-shot classifier.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod backbone;
pub mod data;
pub mod embed;
pub mod error;
pub mod geometry;
pub mod numerics;
pub mod train;
pub mod zeroshot;

pub use error::{Error, Result};
pub use numerics::Scalar;

/// Training precision.
pub type Tensor32 = numerics::Tensor<f32>;
/// Verification precision.
pub type Tensor64 = numerics::Tensor<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Pointy32 = backbone::Pointy<f32>;
pub type Pointy64 = backbone::Pointy<f64>;
