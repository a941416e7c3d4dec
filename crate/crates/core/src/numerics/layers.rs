use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::graph::{Graph, Var};
use super::init::{kaiming_init, zero_init};
use super::{ParamId, ParamStore, Rng, Scalar, Tensor};

/// Fully connected layer; weight is `out × in`.
#[derive(Debug, Clone, Copy)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Registers `{name}.weight` (Kaiming) and `{name}.bias` (zeros).
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.insert(
            format!("{name}.weight"),
            kaiming_init(&[out_dim, in_dim], in_dim, rng),
        );
        let bias = Some(store.insert(format!("{name}.bias"), zero_init(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Registers only `{name}.weight`.
    pub fn register_without_bias<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.insert(
            format!("{name}.weight"),
            kaiming_init(&[out_dim, in_dim], in_dim, rng),
        );
        Self {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub const fn num_params(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    /// `x · Wᵀ + b`, broadcast over the leading extents of `x`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNormLayer {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.insert(format!("{name}.gamma"), Tensor::ones(&[dim]));
        let beta = store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self {
            gamma,
            beta,
            dim,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub const fn num_params(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, T::lit(self.eps))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Relu => g.relu(x),
        }
    }
}
