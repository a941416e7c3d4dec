//! Tokenizer-free patch embedding.
//!
//! Each kNN group becomes one token:
//!
//! ```text
//! token_p = maxpool_j( point_mlp([relative_pj, absolute_pj]) )
//!         + residual_proj(anchor_p)
//!         + pos(anchor_p)            (optional)
//! ```
//!
//! The per-point MLP followed by an elementwise max is independent of the
//! order of points inside a patch.

use crate::backbone::{ModelConfig, PositionalKind};
use crate::error::{Error, Result};
use crate::geometry::{self, FpsStart, PatchSet, PointCloud};
use crate::numerics::{Activation, Graph, LinearLayer, ParamId, ParamStore, Rng, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub enum Positional {
    Mlp { first: LinearLayer, second: LinearLayer },
    Table { table: ParamId, slots: usize },
}

/// Parameter handles of the embedding.
#[derive(Debug, Clone, Copy)]
pub struct EmbedParams {
    pub point_in: LinearLayer,
    pub point_out: LinearLayer,
    pub residual_proj: LinearLayer,
    pub positional: Option<Positional>,
    pub activation: Activation,
    pub k: usize,
}

impl EmbedParams {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let d = cfg.dim;
        let point_in = LinearLayer::register(store, "embed.point.0", cfg.point_features(), cfg.embed_hidden, rng);
        let point_out = LinearLayer::register(store, "embed.point.1", cfg.embed_hidden, d, rng);
        let residual_proj = LinearLayer::register(store, "embed.residual", 3, d, rng);
        let positional = cfg.use_positional.then(|| match cfg.positional {
            PositionalKind::Mlp => Positional::Mlp {
                first: LinearLayer::register(store, "embed.pos.0", 3, d, rng),
                second: LinearLayer::register(store, "embed.pos.1", d, d, rng),
            },
            PositionalKind::Table => {
                // Kaiming with fan_in = D keeps the table on the token scale.
                let t = crate::numerics::kaiming_init(&[cfg.patches, d], d, rng);
                Positional::Table {
                    table: store.insert("embed.pos.table", t),
                    slots: cfg.patches,
                }
            }
        });
        Self {
            point_in,
            point_out,
            residual_proj,
            positional,
            activation: cfg.activation,
            k: cfg.k,
        }
    }

    /// Learned scalar count of this embedding for `cfg`.
    pub fn num_params(cfg: &ModelConfig) -> usize {
        let d = cfg.dim;
        let point = LinearLayer::num_params(cfg.point_features(), cfg.embed_hidden)
            + LinearLayer::num_params(cfg.embed_hidden, d);
        point + LinearLayer::num_params(3, d) + Self::positional_params(cfg)
    }

    pub fn positional_params(cfg: &ModelConfig) -> usize {
        let d = cfg.dim;
        match (cfg.use_positional, cfg.positional) {
            (false, _) => 0,
            (true, PositionalKind::Mlp) => LinearLayer::num_params(3, d) + LinearLayer::num_params(d, d),
            (true, PositionalKind::Table) => cfg.patches * d,
        }
    }
}

/// Network-ready tensors for one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchInput<T> {
    /// `(P·k) × F` per-point features, patch-major.
    pub features: Tensor<T>,
    /// `P × 3` anchor coordinates.
    pub anchors: Tensor<T>,
    pub k: usize,
}

/// Features of one patch: `[relative, absolute]` per neighbour, followed by
/// the neighbour's extra channels when `with_extras` is set.
pub fn patch_point_features<T: Scalar>(patches: &PatchSet<T>, p: usize, with_extras: bool) -> Result<Vec<[T; 9]>> {
    let k = patches.k;
    if with_extras && patches.extras.is_none() {
        return Err(Error::Config("model expects extra channels but the cloud has none".into()));
    }
    Ok((0..k)
        .map(|j| {
            let i = p * k + j;
            let (r, a) = (patches.relative[i], patches.absolute[i]);
            let e = match (&patches.extras, with_extras) {
                (Some(ex), true) => ex[i],
                _ => [T::zero(); 3],
            };
            [r[0], r[1], r[2], a[0], a[1], a[2], e[0], e[1], e[2]]
        })
        .collect())
}

/// Packs a [`PatchSet`] into network tensors.
pub fn patch_input<T: Scalar>(patches: &PatchSet<T>, with_extras: bool) -> Result<PatchInput<T>> {
    let f = if with_extras { 9 } else { 6 };
    let p = patches.num_patches();
    let mut feats = Vec::with_capacity(p * patches.k * f);
    for pi in 0..p {
        for row in patch_point_features(patches, pi, with_extras)? {
            feats.extend_from_slice(&row[..f]);
        }
    }
    let anchors = patches.anchors.iter().flatten().copied().collect();
    Ok(PatchInput {
        features: Tensor::new(vec![p * patches.k, f], feats)?,
        anchors: Tensor::new(vec![p, 3], anchors)?,
        k: patches.k,
    })
}

/// FPS and kNN on an already normalized cloud.
pub fn group<T: Scalar>(cloud: &PointCloud<T>, cfg: &ModelConfig, start: FpsStart) -> Result<PatchSet<T>> {
    if cloud.len() < cfg.patches {
        return Err(Error::Config(format!(
            "cloud `{}` has {} points, fewer than {} patches",
            cloud.id,
            cloud.len(),
            cfg.patches
        )));
    }
    let anchors = geometry::fps(&cloud.points, cfg.patches, start)?;
    geometry::knn_group(cloud, &anchors, cfg.k)
}

/// Normalize, group and pack: everything before the learned embedding.
pub fn prepare<T: Scalar>(cloud: &PointCloud<T>, cfg: &ModelConfig, start: FpsStart) -> Result<PatchInput<T>> {
    let normalized = geometry::normalize_unit_range(cloud)?;
    patch_input(&group(&normalized, cfg, start)?, cfg.use_extras)
}

impl EmbedParams {
    /// Records the embedding on `g`; returns the `P × D` token matrix.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, input: &PatchInput<T>, use_positional: bool) -> Result<Var> {
        if input.features.cols() != self.point_in.in_dim {
            return Err(Error::shape("embed features", input.features.shape(), &[self.point_in.in_dim]));
        }
        let feats = g.input(&input.features);
        let anchors = g.input(&input.anchors);
        let h = self.point_in.forward(g, feats)?;
        let h = self.activation.apply(g, h)?;
        let h = self.point_out.forward(g, h)?;
        let pooled = g.max_pool_groups(h, input.k)?;
        let residual = self.residual_proj.forward(g, anchors)?;
        let mut tokens = g.add(pooled, residual)?;
        if use_positional {
            let pos = match self.positional {
                Some(Positional::Mlp { first, second }) => {
                    let p = first.forward(g, anchors)?;
                    let p = self.activation.apply(g, p)?;
                    second.forward(g, p)?
                }
                Some(Positional::Table { table, slots }) => {
                    let rows = input.anchors.rows();
                    if rows != slots {
                        return Err(Error::shape("positional table", &[rows], &[slots]));
                    }
                    g.param(table)
                }
                None => return Err(Error::Config("positional embedding requested but not registered".into())),
            };
            tokens = g.add(tokens, pos)?;
        }
        Ok(tokens)
    }
}

/// Token matrix of one prepared input, evaluated outside any training graph.
pub fn embed_patches<T: Scalar>(
    store: &ParamStore<T>,
    params: &EmbedParams,
    input: &PatchInput<T>,
    use_positional: bool,
) -> Result<Tensor<T>> {
    let mut g = Graph::new(store);
    let tokens = params.forward(&mut g, input, use_positional)?;
    Ok(g.tensor(tokens))
}

/// `normalize → fps → knn → embed` for one cloud.
pub fn tokenize<T: Scalar>(
    cloud: &PointCloud<T>,
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    params: &EmbedParams,
) -> Result<Tensor<T>> {
    let input = prepare(cloud, cfg, FpsStart::default())?;
    embed_patches(store, params, &input, cfg.use_positional)
}
