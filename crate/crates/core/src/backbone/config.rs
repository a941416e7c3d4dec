use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Activation;

/// How runs of adjacent tokens are combined between blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    /// Elementwise sum; adds no parameters.
    #[default]
    Addition,
    /// Learned `f·D → D` projection of the concatenated run.
    Linear,
}

/// Form of the learned positional term added to each patch token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalKind {
    /// Two-layer MLP of the anchor coordinates.
    #[default]
    Mlp,
    /// One learned vector per token slot (FPS order), ViT style.
    Table,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Embedding dimension `D`.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Patch count `P`.
    pub patches: usize,
    /// Points per patch `k`.
    pub k: usize,
    /// Input points per cloud.
    pub n_points: usize,
    /// Post-block merge factor for each block.
    pub merge_schedule: Vec<usize>,
    pub merge_strategy: MergeStrategy,
    /// When false every merge factor is treated as 1.
    pub hierarchical: bool,
    pub activation: Activation,
    pub use_positional: bool,
    pub positional: PositionalKind,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Hidden width of the per-point MLP in the patch embedding.
    pub embed_hidden: usize,
    /// Feed normals/colors to the point MLP (features grow from 6 to 9).
    pub use_extras: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::small(40)
    }
}

impl ModelConfig {
    pub const DEFAULT_SCHEDULE: [usize; 6] = [2, 2, 2, 2, 2, 1];

    fn preset(dim: usize, heads: usize, num_classes: usize) -> Self {
        assert_eq!(dim, 3 * heads, "presets keep a 3:1 embedding-to-heads ratio");
        Self {
            dim,
            heads,
            layers: 6,
            patches: 64,
            k: 32,
            n_points: 2048,
            merge_schedule: Self::DEFAULT_SCHEDULE.to_vec(),
            merge_strategy: MergeStrategy::Addition,
            hierarchical: true,
            activation: Activation::Gelu,
            use_positional: true,
            positional: PositionalKind::Mlp,
            mlp_ratio: 4,
            num_classes,
            embed_hidden: 64,
            use_extras: false,
        }
    }

    /// D = 192, 64 heads.
    pub fn small(num_classes: usize) -> Self {
        Self::preset(192, 64, num_classes)
    }

    /// D = 510, 170 heads.
    pub fn base(num_classes: usize) -> Self {
        Self::preset(510, 170, num_classes)
    }

    pub fn from_preset(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "small" => Ok(Self::small(num_classes)),
            "base" => Ok(Self::base(num_classes)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (valid: small, base)"
            ))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Channels per grouped point: relative + absolute, plus extras.
    pub fn point_features(&self) -> usize {
        if self.use_extras {
            9
        } else {
            6
        }
    }

    /// Merge factor actually applied after each block.
    pub fn effective_schedule(&self) -> Vec<usize> {
        if self.hierarchical {
            self.merge_schedule.clone()
        } else {
            vec![1; self.layers]
        }
    }

    /// Token count entering block 0, then after each block's merge.
    pub fn token_counts(&self) -> Vec<usize> {
        let mut counts = vec![self.patches];
        let mut t = self.patches;
        for f in self.effective_schedule() {
            t = t.div_ceil(f);
            counts.push(t);
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.layers == 0 {
            return fail("layers must be ≥ 1".into());
        }
        if self.merge_schedule.len() != self.layers {
            return fail(format!(
                "merge schedule has {} entries for {} layers",
                self.merge_schedule.len(),
                self.layers
            ));
        }
        if self.merge_schedule.iter().any(|&f| f == 0) {
            return fail("merge factors must be ≥ 1".into());
        }
        if self.patches == 0 || self.k == 0 {
            return fail("patches and k must be ≥ 1".into());
        }
        if self.patches > self.n_points || self.k > self.n_points {
            return fail(format!(
                "{} patches of {} points need at least that many of the {} input points",
                self.patches, self.k, self.n_points
            ));
        }
        if self.mlp_ratio == 0 || self.num_classes == 0 || self.embed_hidden == 0 {
            return fail("mlp_ratio, num_classes and embed_hidden must be ≥ 1".into());
        }
        Ok(())
    }
}
