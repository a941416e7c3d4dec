//! Hierarchical transformer over patch tokens.

pub mod accounting;
mod config;
mod model;

pub use accounting::{count_flops, count_params, linear_flops, Itemized};
pub use config::{MergeStrategy, ModelConfig, PositionalKind};
pub use model::{argmax, token_merge, Block, ForwardVars, ModelOutput, Pointy};
