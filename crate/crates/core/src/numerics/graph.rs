//! Tape-based reverse-mode differentiation over 2-D row-major tensors.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! Parameters are referenced from a borrowed [`ParamStore`] rather than
//! copied, so building a graph per sample is cheap. [`Graph::backward`]
//! walks the tape in reverse and returns [`Gradients`] for every node that
//! depends on a parameter or a gradient-tracking input.
//!
//! Tensors of higher rank are treated as `rows × cols` where `cols` is the
//! last extent. Every operation checks its output for NaN/Inf.

use crate::error::{Error, Result};

use super::scalar::{axpy, dot};
use super::{ParamId, ParamStore, Scalar, Tensor};

/// Node handle inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Input,
    Param,
    MatMul {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: T,
    },
    Sum {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    MaxPoolGroups {
        x: Var,
        argmax: Vec<usize>,
    },
    SumGroups {
        x: Var,
        factor: usize,
    },
    ConcatGroups {
        x: Var,
    },
    MeanRows {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

impl<T> Node<T> {
    fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    fn rows(&self) -> usize {
        self.shape.iter().product::<usize>() / self.cols()
    }
}

/// Recorded computation over parameters of one [`ParamStore`].
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    backward_done: bool,
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    param_vars: Vec<Option<Var>>,
}

impl<T: Scalar> Gradients<T> {
    /// d(loss)/d(node), if the node tracks gradients and the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_vars
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }

    /// Per-parameter gradients in store order; `None` for unused parameters.
    pub fn into_param_grads(mut self) -> Vec<Option<Vec<T>>> {
        self.param_vars
            .iter()
            .map(|v| v.and_then(|v| self.nodes[v.0].take()))
            .collect()
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            backward_done: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("graph values are validated on insertion")
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows(), n.cols())
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var> {
        check_finite(name, &data)?;
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Value::Owned(t.data().to_vec()),
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: &Tensor<T>) -> Var {
        let v = self.input(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf for a stored parameter. Repeated calls return the same node so
    /// gradients from every use are summed.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            shape: self.params.get(id).shape().to_vec(),
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `a (m×p) · b (p×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, p, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for t in 0..p {
                axpy(av[i * p + t], &bv[t * n..(t + 1) * n], row);
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b }, rg)
    }

    /// `x · wᵀ + b` over the leading extents of `x`; `w` is `out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, inp) = self.rows_cols(x);
        let sw = self.shape(w);
        if sw.len() != 2 || sw[1] != inp {
            return Err(Error::shape("linear", self.shape(x), sw));
        }
        let out_dim = sw[0];
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return Err(Error::shape("linear bias", self.shape(b), &[out_dim]));
            }
        }
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = b.map(|b| self.value(b));
        let mut out = vec![T::zero(); rows * out_dim];
        for r in 0..rows {
            let xr = &xv[r * inp..(r + 1) * inp];
            let yr = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, y) in yr.iter_mut().enumerate() {
                *y = dot(xr, &wv[o * inp..(o + 1) * inp]);
                if let Some(bv) = bv {
                    *y += bv[o];
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push("linear", shape, out, Op::Linear { x, w, b }, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push("add", self.shape(a).to_vec(), out, Op::Add { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.requires(a);
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale { a, s }, rg)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        let rg = self.requires(a);
        self.push("sum", vec![1], vec![s], Op::Sum { a }, rg)
    }

    /// Exact GeLU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.requires(a);
        self.push("gelu", self.shape(a).to_vec(), out, Op::Gelu { a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        let rg = self.requires(a);
        self.push("relu", self.shape(a).to_vec(), out, Op::Relu { a }, rg)
    }

    /// Softmax along the last axis, stabilized by the per-row maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.rows_cols(a);
        let mut out = self.value(a).to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let rg = self.requires(a);
        self.push("softmax", self.shape(a).to_vec(), out, Op::Softmax { a }, rg)
    }

    /// Per-row normalization with population variance, then `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let dt = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let xr = &xv[r * d..(r + 1) * d];
            let mean = xr.iter().copied().sum::<T>() / dt;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (xr[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        self.push("layer_norm", self.shape(x).to_vec(), out, op, rg)
    }

    /// Elementwise max over consecutive groups of `group` rows:
    /// `(G·group) × D → G × D`. Ties resolve to the earliest row.
    pub fn max_pool_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if group == 0 || rows % group != 0 {
            return Err(Error::shape("max_pool_groups", self.shape(x), &[group]));
        }
        let g = rows / group;
        let xv = self.value(x);
        let mut out = vec![T::zero(); g * d];
        let mut argmax = vec![0usize; g * d];
        for gi in 0..g {
            let base = gi * group;
            for j in 0..d {
                let mut best = base;
                for r in base + 1..base + group {
                    if xv[r * d + j] > xv[best * d + j] {
                        best = r;
                    }
                }
                out[gi * d + j] = xv[best * d + j];
                argmax[gi * d + j] = best * d + j;
            }
        }
        let rg = self.requires(x);
        self.push("max_pool", vec![g, d], out, Op::MaxPoolGroups { x, argmax }, rg)
    }

    /// Sums consecutive runs of `factor` rows; a trailing short run is summed
    /// on its own. Output has `⌈T/factor⌉` rows.
    pub fn sum_groups(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if factor == 0 {
            return Err(Error::Config("merge factor must be ≥ 1".into()));
        }
        let out_rows = rows.div_ceil(factor);
        let xv = self.value(x);
        let mut out = vec![T::zero(); out_rows * d];
        for r in 0..rows {
            let o = r / factor;
            for j in 0..d {
                out[o * d + j] += xv[r * d + j];
            }
        }
        let rg = self.requires(x);
        self.push("sum_groups", vec![out_rows, d], out, Op::SumGroups { x, factor }, rg)
    }

    /// Concatenates consecutive runs of `factor` rows into one row of width
    /// `factor·D`, zero-padding a trailing short run.
    pub fn concat_groups(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        if factor == 0 {
            return Err(Error::Config("merge factor must be ≥ 1".into()));
        }
        let out_rows = rows.div_ceil(factor);
        let mut out = vec![T::zero(); out_rows * factor * d];
        out[..rows * d].copy_from_slice(self.value(x));
        let rg = self.requires(x);
        let shape = vec![out_rows, factor * d];
        self.push("concat_groups", shape, out, Op::ConcatGroups { x }, rg)
    }

    /// Mean over rows, `T × D → 1 × D`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, d) = self.rows_cols(x);
        let xv = self.value(x);
        let inv = T::one() / T::from_usize(rows).unwrap();
        let mut out = vec![T::zero(); d];
        for r in 0..rows {
            for j in 0..d {
                out[j] += xv[r * d + j];
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.requires(x);
        self.push("mean_rows", vec![1, d], out, Op::MeanRows { x }, rg)
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.rows_cols(logits);
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index {
                what: "class labels",
                index: bad,
                len: c,
            });
        }
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for r in 0..b {
            let row = &lv[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total += lse - row[labels[r]];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let loss = total / T::from_usize(b).unwrap();
        let rg = self.requires(logits);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("cross_entropy", vec![1], vec![loss], op, rg)
    }

    /// Multi-head scaled dot-product attention over `T × D` projections.
    /// Head `h` uses columns `h·D/H .. (h+1)·D/H`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (t, d) = self.rows_cols(q);
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "embedding dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); heads * t * t];
        let mut out = vec![T::zero(); t * d];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..t {
                let qi = &qv[i * d + c0..i * d + c0 + dh];
                let p = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj = scale * dot(qi, &kv[j * d + c0..j * d + c0 + dh]);
                }
                softmax_in_place(p);
                let oi = &mut out[i * d + c0..i * d + c0 + dh];
                for (j, &pj) in p.iter().enumerate() {
                    axpy(pj, &vv[j * d + c0..j * d + c0 + dh], oi);
                }
            }
        }
        let rg = self.requires(q) || self.requires(k) || self.requires(v);
        let op = Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        };
        self.push("attention", vec![t, d], out, op, rg)
    }

    /// Reverse accumulation from a single-element `loss`. May run once per
    /// graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.nodes[loss.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(self.nodes[loss.0].shape.clone()));
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            nodes: grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul { a, b } => {
                let (m, p) = self.rows_cols(*a);
                let n = self.rows_cols(*b).1;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for t in 0..p {
                            da[r * p + t] += dot(gr, &bv[t * n..(t + 1) * n]);
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for t in 0..p {
                            axpy(av[r * p + t], gr, &mut db[t * n..(t + 1) * n]);
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (rows, inp) = self.rows_cols(*x);
                let out = node.cols();
                let (xv, wv) = (self.value(*x), self.value(*w));
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let dxr = &mut dx[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = g[r * out + o];
                            if go != T::zero() {
                                axpy(go, &wv[o * inp..(o + 1) * inp], dxr);
                            }
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..rows {
                        let xr = &xv[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = g[r * out + o];
                            if go != T::zero() {
                                axpy(go, xr, &mut dw[o * inp..(o + 1) * inp]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        for r in 0..rows {
                            for o in 0..out {
                                db[o] += g[r * out + o];
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        axpy(T::one(), g, d);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale { a, s } => {
                if let Some(da) = self.slot(grads, *a) {
                    axpy(*s, g, da);
                }
            }
            Op::Sum { a } => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Gelu { a } => {
                let av = self.value(*a);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gi), &x) in da.iter_mut().zip(g).zip(av) {
                        *d += gi * gelu_grad(x);
                    }
                }
            }
            Op::Relu { a } => {
                let av = self.value(*a);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gi), &x) in da.iter_mut().zip(g).zip(av) {
                        if x > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Softmax { a } => {
                let cols = node.cols();
                let y = self.value(Var(i));
                if let Some(da) = self.slot(grads, *a) {
                    for r in 0..node.rows() {
                        let (yr, gr) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        let s = dot(gr, yr);
                        for j in 0..cols {
                            da[r * cols + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.cols();
                let rows = node.rows();
                let gv = self.value(*gamma);
                if let Some(dg) = self.slot(grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for r in 0..rows {
                        axpy(T::one(), &g[r * d..(r + 1) * d], db);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let dt = T::from_usize(d).unwrap();
                    for r in 0..rows {
                        let (gr, hr) = (&g[r * d..(r + 1) * d], &xhat[r * d..(r + 1) * d]);
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= dt;
                        m2 /= dt;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dx[r * d + j] += rstd[r] * (dh - m1 - hr[j] * m2);
                        }
                    }
                }
            }
            Op::MaxPoolGroups { x, argmax } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (&src, &gi) in argmax.iter().zip(g) {
                        dx[src] += gi;
                    }
                }
            }
            Op::SumGroups { x, factor } => {
                let (rows, d) = self.rows_cols(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        let o = r / factor;
                        axpy(T::one(), &g[o * d..(o + 1) * d], &mut dx[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::ConcatGroups { x } => {
                let len = self.value(*x).len();
                if let Some(dx) = self.slot(grads, *x) {
                    axpy(T::one(), &g[..len], dx);
                }
            }
            Op::MeanRows { x } => {
                let (rows, d) = self.rows_cols(*x);
                let inv = T::one() / T::from_usize(rows).unwrap();
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..rows {
                        axpy(inv, g, &mut dx[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (b, c) = self.rows_cols(*logits);
                let s = g[0] / T::from_usize(b).unwrap();
                if let Some(dl) = self.slot(grads, *logits) {
                    for r in 0..b {
                        for j in 0..c {
                            let target = if j == labels[r] { T::one() } else { T::zero() };
                            dl[r * c + j] += s * (probs[r * c + j] - target);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.backprop_attention(g, grads, [*q, *k, *v], *heads, probs),
        }
        Ok(())
    }

    fn backprop_attention(
        &self,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        [q, k, v]: [Var; 3],
        heads: usize,
        probs: &[T],
    ) {
        let (t, d) = self.rows_cols(q);
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));

        // Score gradients first; they feed both dQ and dK.
        let mut dscore = vec![T::zero(); heads * t * t];
        let mut dv = vec![T::zero(); t * d];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..t {
                let gi = &g[i * d + c0..i * d + c0 + dh];
                let p = &probs[(h * t + i) * t..(h * t + i + 1) * t];
                let ds = &mut dscore[(h * t + i) * t..(h * t + i + 1) * t];
                let mut s = T::zero();
                for j in 0..t {
                    let da = dot(gi, &vv[j * d + c0..j * d + c0 + dh]);
                    ds[j] = da;
                    s += da * p[j];
                    axpy(p[j], gi, &mut dv[j * d + c0..j * d + c0 + dh]);
                }
                for j in 0..t {
                    ds[j] = p[j] * (ds[j] - s) * scale;
                }
            }
        }
        if let Some(dq) = self.slot(grads, q) {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..t {
                    let ds = &dscore[(h * t + i) * t..(h * t + i + 1) * t];
                    for j in 0..t {
                        let (src, dst) = (j * d + c0, i * d + c0);
                        axpy(ds[j], &kv[src..src + dh], &mut dq[dst..dst + dh]);
                    }
                }
            }
        }
        if let Some(dk) = self.slot(grads, k) {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..t {
                    let ds = &dscore[(h * t + i) * t..(h * t + i + 1) * t];
                    for j in 0..t {
                        let (src, dst) = (i * d + c0, j * d + c0);
                        axpy(ds[j], &qv[src..src + dh], &mut dk[dst..dst + dh]);
                    }
                }
            }
        }
        if let Some(slot) = self.slot(grads, v) {
            axpy(T::one(), &dv, slot);
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.shape.iter().product();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }
}

/// `x·Φ(x)` with the exact Gaussian CDF.
pub fn gelu<T: Scalar>(x: T) -> T {
    x * std_normal_cdf(x)
}

/// `Φ(x) + x·φ(x)`.
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let pdf = (-(x * x) / T::lit(2.0)).exp() / T::lit((2.0 * std::f64::consts::PI).sqrt());
    std_normal_cdf(x) + x * pdf
}

fn std_normal_cdf<T: Scalar>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x / T::lit(std::f64::consts::SQRT_2)).erf())
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = T::one() / s;
    row.iter_mut().for_each(|v| *v *= inv);
}
