use crate::embed::{self, EmbedParams, PatchInput};
use crate::error::{Error, Result};
use crate::geometry::{FpsStart, PointCloud};
use crate::numerics::rng::{seeded, streams};
use crate::numerics::{Activation, Graph, LayerNormLayer, LinearLayer, ParamStore, Rng, Scalar, Tensor, Var};

use super::{MergeStrategy, ModelConfig};

/// One pre-norm transformer block plus its post-block merge.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln_attn: LayerNormLayer,
    pub q: LinearLayer,
    pub k: LinearLayer,
    pub v: LinearLayer,
    pub o: LinearLayer,
    pub ln_mlp: LayerNormLayer,
    pub fc1: LinearLayer,
    pub fc2: LinearLayer,
    pub merge_factor: usize,
    pub merge_proj: Option<LinearLayer>,
}

impl Block {
    fn register<T: Scalar>(store: &mut ParamStore<T>, cfg: &ModelConfig, i: usize, factor: usize, rng: &mut Rng) -> Self {
        let d = cfg.dim;
        let name = |s: &str| format!("blocks.{i}.{s}");
        let ln_attn = LayerNormLayer::register(store, &name("ln_attn"), d);
        let q = LinearLayer::register(store, &name("attn.q"), d, d, rng);
        // A key bias shifts every score in a row equally, so softmax cancels it.
        let k = LinearLayer::register_without_bias(store, &name("attn.k"), d, d, rng);
        let v = LinearLayer::register(store, &name("attn.v"), d, d, rng);
        let o = LinearLayer::register(store, &name("attn.o"), d, d, rng);
        let ln_mlp = LayerNormLayer::register(store, &name("ln_mlp"), d);
        let fc1 = LinearLayer::register(store, &name("mlp.fc1"), d, cfg.mlp_ratio * d, rng);
        let fc2 = LinearLayer::register(store, &name("mlp.fc2"), cfg.mlp_ratio * d, d, rng);
        let merge_proj = (factor > 1 && cfg.merge_strategy == MergeStrategy::Linear)
            .then(|| LinearLayer::register(store, &name("merge"), factor * d, d, rng));
        Self {
            ln_attn,
            q,
            k,
            v,
            o,
            ln_mlp,
            fc1,
            fc2,
            merge_factor: factor,
            merge_proj,
        }
    }

    /// `x ← x + MHA(LN(x)); x ← x + MLP(LN(x))`.
    pub fn attend<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, heads: usize, act: Activation) -> Result<Var> {
        let h = self.ln_attn.forward(g, x)?;
        let q = self.q.forward(g, h)?;
        let k = self.k.forward(g, h)?;
        let v = self.v.forward(g, h)?;
        let a = g.attention(q, k, v, heads)?;
        let a = self.o.forward(g, a)?;
        let x = g.add(x, a)?;
        let h = self.ln_mlp.forward(g, x)?;
        let h = self.fc1.forward(g, h)?;
        let h = act.apply(g, h)?;
        let h = self.fc2.forward(g, h)?;
        g.add(x, h)
    }

    pub fn merge<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        token_merge(g, x, self.merge_factor, self.merge_proj)
    }
}

/// Combines consecutive runs of `factor` tokens in their current order:
/// summed when `proj` is `None`, otherwise concatenated (zero-padded) and
/// projected back to `D`.
pub fn token_merge<T: Scalar>(g: &mut Graph<'_, T>, x: Var, factor: usize, proj: Option<LinearLayer>) -> Result<Var> {
    if factor == 1 {
        return Ok(x);
    }
    match proj {
        None => g.sum_groups(x, factor),
        Some(p) => {
            if p.in_dim != factor * g.shape(x)[1] {
                return Err(Error::shape("token_merge", g.shape(x), &[p.in_dim]));
            }
            let cat = g.concat_groups(x, factor)?;
            p.forward(g, cat)
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Final `P' × D` tokens.
    pub tokens: Var,
    /// `1 × D` mean of the final tokens.
    pub pooled: Var,
    /// `1 × C`.
    pub logits: Var,
}

/// Materialized outputs of [`Pointy::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput<T> {
    pub tokens: Tensor<T>,
    pub pooled: Tensor<T>,
    pub logits: Tensor<T>,
}

/// The hierarchical point-cloud transformer.
#[derive(Debug, Clone)]
pub struct Pointy<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    embed: EmbedParams,
    blocks: Vec<Block>,
    head_ln: LayerNormLayer,
    head: LinearLayer,
}

impl<T: Scalar> Pointy<T> {
    /// Fresh model with Kaiming weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, streams::INIT);
        let mut params = ParamStore::new();
        let embed = EmbedParams::register(&mut params, &config, &mut rng);
        let blocks = config
            .effective_schedule()
            .into_iter()
            .enumerate()
            .map(|(i, f)| Block::register(&mut params, &config, i, f, &mut rng))
            .collect();
        let head_ln = LayerNormLayer::register(&mut params, "head.ln", config.dim);
        let head = LinearLayer::register(&mut params, "head.fc", config.dim, config.num_classes, &mut rng);
        Ok(Self {
            config,
            params,
            embed,
            blocks,
            head_ln,
            head,
        })
    }

    /// Model with the given tensors, which must match `config` by name and
    /// shape in registration order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (id, (name, t)) in model.params.ids().collect::<Vec<_>>().into_iter().zip(tensors) {
            let want = model.params.get(id);
            if model.params.name(id) != name || want.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "tensor `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    model.params.name(id),
                    want.shape()
                )));
            }
            *model.params.get_mut(id) = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn embed(&self) -> &EmbedParams {
        &self.embed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Normalization, FPS and kNN for one cloud.
    pub fn prepare(&self, cloud: &PointCloud<T>, start: FpsStart) -> Result<PatchInput<T>> {
        embed::prepare(cloud, &self.config, start)
    }

    /// Records embedding, blocks, pooling and head on `g`.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, input: &PatchInput<T>) -> Result<ForwardVars> {
        let cfg = &self.config;
        let mut x = self.embed.forward(g, input, cfg.use_positional)?;
        for block in &self.blocks {
            x = block.attend(g, x, cfg.heads, cfg.activation)?;
            x = block.merge(g, x)?;
        }
        let pooled = g.mean_rows(x)?;
        let h = self.head_ln.forward(g, pooled)?;
        let logits = self.head.forward(g, h)?;
        Ok(ForwardVars {
            tokens: x,
            pooled,
            logits,
        })
    }

    pub fn forward_prepared(&self, input: &PatchInput<T>) -> Result<ModelOutput<T>> {
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, input)?;
        Ok(ModelOutput {
            tokens: g.tensor(v.tokens),
            pooled: g.tensor(v.pooled),
            logits: g.tensor(v.logits),
        })
    }

    /// Full forward pass with the deterministic FPS start.
    pub fn forward(&self, cloud: &PointCloud<T>) -> Result<ModelOutput<T>> {
        self.forward_prepared(&self.prepare(cloud, FpsStart::default())?)
    }

    /// Cross-entropy of one sample and its per-parameter gradients.
    pub fn loss_and_grads(&self, input: &PatchInput<T>, label: usize) -> Result<(T, Vec<Option<Vec<T>>>)> {
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, input)?;
        let loss = g.cross_entropy(v.logits, &[label])?;
        let value = g.item(loss);
        let grads = g.backward(loss)?.into_param_grads();
        Ok((value, grads))
    }

    /// Loss only, no tape traversal.
    pub fn loss(&self, input: &PatchInput<T>, label: usize) -> Result<T> {
        let mut g = Graph::new(&self.params);
        let v = self.forward_graph(&mut g, input)?;
        let loss = g.cross_entropy(v.logits, &[label])?;
        Ok(g.item(loss))
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Pointy<U> {
        Pointy {
            config: self.config.clone(),
            params: self.params.cast(),
            embed: self.embed,
            blocks: self.blocks.clone(),
            head_ln: self.head_ln,
            head: self.head,
        }
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
