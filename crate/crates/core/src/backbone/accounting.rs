//! Closed-form parameter and FLOP accounting.
//!
//! FLOPs count a multiply-add as two operations, so an `m×n` by `n×k`
//! product costs `2mnk`. Attention includes the `T²·D` score and value
//! products. FPS costs one squared distance (3 multiply-adds) per point per
//! anchor plus a centroid pass; kNN costs one squared distance per point per
//! anchor. Elementwise work (activations, norms, softmax, max-pool) is not
//! counted.

use serde::Serialize;

use crate::embed::EmbedParams;
use crate::numerics::{LayerNormLayer, LinearLayer};

use super::{MergeStrategy, ModelConfig};

/// Named line items summing to `total`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Itemized {
    pub items: Vec<(String, u64)>,
    pub total: u64,
}

impl Itemized {
    fn from_items(items: Vec<(String, u64)>) -> Self {
        let total = items.iter().map(|(_, v)| v).sum();
        Self { items, total }
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.items.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Sum of all items whose name starts with `prefix`.
    pub fn sum_prefix(&self, prefix: &str) -> u64 {
        self.items.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, v)| v).sum()
    }
}

/// `2·m·n·k`.
pub const fn linear_flops(m: usize, n: usize, k: usize) -> u64 {
    2 * (m as u64) * (n as u64) * (k as u64)
}

/// Parameters of merge projection for factor `f`: `f·D·D + D`.
pub fn merge_proj_params(cfg: &ModelConfig, factor: usize) -> usize {
    LinearLayer::num_params(factor * cfg.dim, cfg.dim)
}

/// Exact learned-scalar count.
pub fn count_params(cfg: &ModelConfig) -> Itemized {
    let d = cfg.dim;
    let mut items = vec![
        (
            "embed.point_mlp".to_string(),
            (LinearLayer::num_params(cfg.point_features(), cfg.embed_hidden) + LinearLayer::num_params(cfg.embed_hidden, d))
                as u64,
        ),
        ("embed.residual".to_string(), LinearLayer::num_params(3, d) as u64),
        ("embed.positional".to_string(), EmbedParams::positional_params(cfg) as u64),
    ];
    for (i, f) in cfg.effective_schedule().into_iter().enumerate() {
        let norms = 2 * LayerNormLayer::num_params(d);
        let attn = 4 * LinearLayer::num_params(d, d) - d;
        let mlp = LinearLayer::num_params(d, cfg.mlp_ratio * d) + LinearLayer::num_params(cfg.mlp_ratio * d, d);
        items.push((format!("blocks.{i}.norms"), norms as u64));
        items.push((format!("blocks.{i}.attention"), attn as u64));
        items.push((format!("blocks.{i}.mlp"), mlp as u64));
        let merge = if f > 1 && cfg.merge_strategy == MergeStrategy::Linear {
            merge_proj_params(cfg, f)
        } else {
            0
        };
        items.push((format!("blocks.{i}.merge"), merge as u64));
    }
    items.push((
        "head".to_string(),
        (LayerNormLayer::num_params(d) + LinearLayer::num_params(d, cfg.num_classes)) as u64,
    ));
    Itemized::from_items(items)
}

/// Analytic forward FLOPs for one cloud of `n_points`.
pub fn count_flops(cfg: &ModelConfig, n_points: usize) -> Itemized {
    let (d, p, k) = (cfg.dim, cfg.patches, cfg.k);
    let dist = 6u64;
    let mut items = vec![
        ("fps".to_string(), dist * (n_points as u64) * (p as u64 + 1)),
        ("knn".to_string(), dist * (n_points as u64) * (p as u64)),
        (
            "embed.point_mlp".to_string(),
            linear_flops(p * k, cfg.point_features(), cfg.embed_hidden) + linear_flops(p * k, cfg.embed_hidden, d),
        ),
        ("embed.residual".to_string(), linear_flops(p, 3, d)),
        (
            "embed.positional".to_string(),
            if cfg.use_positional && cfg.positional == super::PositionalKind::Mlp {
                linear_flops(p, 3, d) + linear_flops(p, d, d)
            } else {
                0
            },
        ),
    ];
    let mut t = p;
    for (i, f) in cfg.effective_schedule().into_iter().enumerate() {
        items.push((format!("blocks.{i}.qkvo"), 4 * linear_flops(t, d, d)));
        items.push((format!("blocks.{i}.scores"), linear_flops(t, d, t)));
        items.push((format!("blocks.{i}.values"), linear_flops(t, t, d)));
        items.push((
            format!("blocks.{i}.mlp"),
            linear_flops(t, d, cfg.mlp_ratio * d) + linear_flops(t, cfg.mlp_ratio * d, d),
        ));
        let out = t.div_ceil(f);
        let merge = if f > 1 && cfg.merge_strategy == MergeStrategy::Linear {
            linear_flops(out, f * d, d)
        } else {
            0
        };
        items.push((format!("blocks.{i}.merge"), merge));
        t = out;
    }
    items.push(("head".to_string(), linear_flops(1, d, cfg.num_classes)));
    Itemized::from_items(items)
}
