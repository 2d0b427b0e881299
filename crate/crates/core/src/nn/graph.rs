//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every op eagerly; [`Graph::backward`] walks the tape
//! in reverse. Parameters enter the tape through [`Graph::param`] and their
//! gradients flow back into the [`ParamStore`] via
//! [`Graph::accumulate_param_grads`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalar::{gemm, MatMut, MatRef};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    ConcatRows(Var, Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Elu(Var),
    Softplus(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        /// Softmax weights, `heads x S x S`.
        probs: Vec<T>,
        /// Inverted-dropout multipliers on `probs`, when training.
        drop: Option<Vec<T>>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<T>,
    },
    RegionMae {
        pred: Var,
        target: Vec<T>,
        /// Per-row loss weight applied to `sign(pred - target)`.
        row_scale: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Elu(_) => "elu",
            Op::Softplus(_) => "softplus",
            Op::Dropout { .. } => "dropout",
            Op::Attention { .. } => "attention",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::RegionMae { .. } => "region_mae",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
    check_finite: bool,
    non_finite: Option<(&'static str, usize)>,
}

// Scalar helpers shared by forward and backward passes.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Scaled dot-product attention weights for every head, `heads x S x S`.
pub fn attention_weights<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Result<Vec<T>> {
    let (s, d) = q.dims2()?;
    if k.dims2()? != (s, d) {
        return Err(Error::Shape("attention q/k shapes differ".into()));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("model width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); heads * s * s];
    for (h, p) in probs.chunks_mut(s * s).enumerate() {
        gemm(
            scale,
            MatRef::block(q.data(), s, d, h * dh, dh),
            MatRef::block(k.data(), s, d, h * dh, dh).t(),
            T::zero(),
            MatMut::row_major(p, s, s),
        );
        softmax_rows(p, s);
    }
    Ok(probs)
}

fn add_into<T: Scalar>(dst: &mut Option<Vec<T>>, src: &[T]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += *b),
        None => *dst = Some(src.to_vec()),
    }
}

/// Gradient slot of `nodes[v]`, allocated on first use.
fn slot<T: Scalar>(nodes: &mut [Node<T>], v: Var) -> Option<&mut Vec<T>> {
    let n = &mut nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    let len = n.value.numel();
    Some(n.grad.get_or_insert_with(|| vec![T::zero(); len]))
}

impl<T: Scalar> Graph<T> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            rng: None,
            check_finite: cfg!(debug_assertions),
            non_finite: None,
        }
    }

    /// Training graph: dropout masks are drawn from a generator seeded here.
    pub fn training(seed: u64) -> Self {
        Self {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Enable or disable the per-op finiteness sweep (on in debug builds).
    pub fn set_finite_check(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.check_finite && self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((op.name(), self.nodes.len()));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Error if any op so far produced a non-finite value.
    pub fn finite_check(&self) -> Result<()> {
        match self.non_finite {
            Some((op, node)) => Err(Error::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Constant input; no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (for probes and checks).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bring a parameter onto the tape; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::row_major(self.value(a).data(), m, k),
            MatRef::row_major(self.value(b).data(), k, n),
            T::zero(),
            MatMut::row_major(&mut out, m, n),
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// `x W + b` along the last axis; `x: [m, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (m, k) = self.dims(x)?;
        let (k2, n) = self.dims(w)?;
        if k != k2 {
            return Err(Error::Shape(format!("linear input width {k}, weight {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != n {
                return Err(Error::Shape(format!("bias of {} for width {n}", bias.len())));
            }
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            T::one(),
            MatRef::row_major(self.value(x).data(), m, k),
            MatRef::row_major(self.value(w).data(), k, n),
            T::one(),
            MatMut::row_major(&mut out, m, n),
        );
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Linear { x, w, b }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::new(self.value(a).shape(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// `x[m, n] + row[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let r = self.value(row).data();
        if r.len() != n {
            return Err(Error::Shape(format!("row of {} for width {n}", r.len())));
        }
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(n) {
            chunk.iter_mut().zip(r).for_each(|(a, b)| *a += *b);
        }
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(Tensor::new(&[m, n], data)?, Op::AddRow(x, row), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| *v * c).collect();
        let t = Tensor::new(t.shape(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    /// Stack `a` on top of `b` (time concatenation).
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.dims(a)?;
        let (mb, nb) = self.dims(b)?;
        if na != nb {
            return Err(Error::Shape(format!("concat widths {na} and {nb}")));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[ma + mb, na], data)?, Op::ConcatRows(a, b), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if start + len > m {
            return Err(Error::Shape(format!("rows [{start}, {}) of {m}", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[len, n], data)?, Op::SliceRows { x, start }, ng))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        if g.len() != n || b.len() != n {
            return Err(Error::Shape(format!("layer norm params for width {n}")));
        }
        let eps = T::from_f64(LN_EPS);
        let nf = T::from_f64(n as f64);
        let mut out = vec![T::zero(); m * n];
        let mut means = Vec::with_capacity(m);
        let mut rstds = Vec::with_capacity(m);
        for (row, o) in self.value(x).data().chunks(n).zip(out.chunks_mut(n)) {
            let mean = row.iter().cloned().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let rstd = T::one() / (var + eps).sqrt();
            for i in 0..n {
                o[i] = (row[i] - mean) * rstd * g[i] + b[i];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            mean: means,
            rstd: rstds,
        };
        Ok(self.push(Tensor::new(&[m, n], out)?, op, ng))
    }

    fn map(&mut self, x: Var, f: fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(t.shape(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, op, ng)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, x: Var) -> Var {
        self.map(x, elu, Op::Elu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    /// Inverted dropout; identity on inference graphs or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let t = Tensor::new(t.shape(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Dropout { x, mask }, ng)
    }

    /// Multi-head scaled dot-product self-attention core over projected
    /// `q`, `k`, `v` (each `[S, D]`), without masking. Returns `[S, D]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, dropout: f64) -> Result<Var> {
        let (s, d) = self.dims(q)?;
        if self.dims(v)? != (s, d) {
            return Err(Error::Shape("attention q/v shapes differ".into()));
        }
        let probs = attention_weights(self.value(q), self.value(k), heads)?;
        let drop = match self.rng.as_mut() {
            Some(rng) if dropout > 0.0 => {
                let keep = T::from_f64(1.0 / (1.0 - dropout));
                Some(
                    (0..probs.len())
                        .map(|_| if rng.gen::<f64>() < dropout { T::zero() } else { keep })
                        .collect::<Vec<T>>(),
                )
            }
            _ => None,
        };
        let dh = d / heads;
        let mut out = vec![T::zero(); s * d];
        let mut scratch = vec![T::zero(); s * s];
        for h in 0..heads {
            let p = &probs[h * s * s..(h + 1) * s * s];
            let p = match &drop {
                Some(mask) => {
                    let m = &mask[h * s * s..(h + 1) * s * s];
                    scratch.iter_mut().zip(p.iter().zip(m)).for_each(|(o, (a, b))| *o = *a * *b);
                    &scratch[..]
                }
                None => p,
            };
            gemm(
                T::one(),
                MatRef::row_major(p, s, s),
                MatRef::block(self.value(v).data(), s, d, h * dh, dh),
                T::zero(),
                MatMut::block(&mut out, s, d, h * dh, dh),
            );
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        let op = Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
            drop,
        };
        Ok(self.push(Tensor::new(&[s, d], out)?, op, ng))
    }

    /// Scalar `sum(x * weights)`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        let t = self.value(x);
        if weights.len() != t.numel() {
            return Err(Error::Shape("weighted sum length".into()));
        }
        let s = t.data().iter().zip(&weights).map(|(a, b)| *a * *b).sum();
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.weighted_sum(x, vec![T::one(); n]).expect("matching length")
    }

    /// Two-region weighted mean absolute error over rows of `pred`.
    ///
    /// Rows with `known[r] == false` form the corrupted region. The result is
    /// `alpha * MAE(corrupted) + beta * MAE(known)` where each MAE averages
    /// over its own entries and an empty region contributes zero.
    pub fn region_mae(
        &mut self,
        pred: Var,
        target: &[T],
        known: &[bool],
        alpha: T,
        beta: T,
    ) -> Result<Var> {
        let (m, n) = self.dims(pred)?;
        if target.len() != m * n || known.len() != m {
            return Err(Error::Shape(format!(
                "loss target {} / mask {} for prediction {m}x{n}",
                target.len(),
                known.len()
            )));
        }
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput("loss over an empty spectrogram".into()));
        }
        let n_known = known.iter().filter(|k| **k).count();
        let n_corrupt = m - n_known;
        let per_entry = |count: usize, w: T| {
            if count == 0 {
                T::zero()
            } else {
                w / T::from_f64((count * n) as f64)
            }
        };
        let w_known = per_entry(n_known, beta);
        let w_corrupt = per_entry(n_corrupt, alpha);
        let row_scale: Vec<T> = known
            .iter()
            .map(|&k| if k { w_known } else { w_corrupt })
            .collect();
        let p = self.value(pred).data();
        let mut loss = T::zero();
        for (r, scale) in row_scale.iter().enumerate() {
            let row: T = p[r * n..(r + 1) * n]
                .iter()
                .zip(&target[r * n..(r + 1) * n])
                .map(|(a, b)| (*a - *b).abs())
                .sum();
            loss += *scale * row;
        }
        let ng = self.needs(pred);
        let op = Op::RegionMae {
            pred,
            target: target.to_vec(),
            row_scale,
        };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).numel() != 1 {
            return Err(Error::Shape("backward needs a scalar output".into()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[out.0].needs_grad {
            return Ok(());
        }
        self.nodes[out.0].grad = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            backward_node(before, node, &dy);
            self.nodes[i].grad = Some(dy);
        }
        Ok(())
    }

    /// Add parameter gradients from the last backward pass into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                store.accumulate_grad(*id, g);
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn backward_node<T: Scalar>(nodes: &mut [Node<T>], node: &Node<T>, dy: &[T]) {
    let y = &node.value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[a.0].value.dims2().unwrap();
            let n = nodes[b.0].value.shape()[1];
            matmul_backward(nodes, *a, *b, dy, m, k, n);
        }
        Op::Linear { x, w, b } => {
            let (m, k) = nodes[x.0].value.dims2().unwrap();
            let n = nodes[w.0].value.shape()[1];
            matmul_backward(nodes, *x, *w, dy, m, k, n);
            if let Some(b) = b {
                if let Some(gb) = slot(nodes, *b) {
                    for row in dy.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(g, d)| *g += *d);
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(g) = slot(nodes, *v) {
                    g.iter_mut().zip(dy).for_each(|(g, d)| *g += *d);
                }
            }
        }
        Op::AddRow(x, row) => {
            if let Some(g) = slot(nodes, *x) {
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += *d);
            }
            let n = y.shape()[1];
            if let Some(g) = slot(nodes, *row) {
                for chunk in dy.chunks(n) {
                    g.iter_mut().zip(chunk).for_each(|(g, d)| *g += *d);
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(g) = slot(nodes, *x) {
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += *d * *c);
            }
        }
        Op::ConcatRows(a, b) => {
            let split = nodes[a.0].value.numel();
            if let Some(g) = slot(nodes, *a) {
                g.iter_mut().zip(&dy[..split]).for_each(|(g, d)| *g += *d);
            }
            if let Some(g) = slot(nodes, *b) {
                g.iter_mut().zip(&dy[split..]).for_each(|(g, d)| *g += *d);
            }
        }
        Op::SliceRows { x, start } => {
            let n = y.shape()[1];
            if let Some(g) = slot(nodes, *x) {
                g[start * n..start * n + dy.len()]
                    .iter_mut()
                    .zip(dy)
                    .for_each(|(g, d)| *g += *d);
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            mean,
            rstd,
        } => {
            let (m, n) = y.dims2().unwrap();
            let xs = nodes[x.0].value.data().to_vec();
            let g = nodes[gain.0].value.data().to_vec();
            let nf = T::from_f64(n as f64);
            let mut dgain = vec![T::zero(); n];
            let mut dbias = vec![T::zero(); n];
            let mut dx = vec![T::zero(); m * n];
            let mut xhat = vec![T::zero(); n];
            let mut dxhat = vec![T::zero(); n];
            for r in 0..m {
                let row = &xs[r * n..(r + 1) * n];
                let dyr = &dy[r * n..(r + 1) * n];
                let (mu, rs) = (mean[r], rstd[r]);
                let mut sum_dxhat = T::zero();
                let mut sum_dxhat_xhat = T::zero();
                for i in 0..n {
                    xhat[i] = (row[i] - mu) * rs;
                    dxhat[i] = dyr[i] * g[i];
                    dgain[i] += dyr[i] * xhat[i];
                    dbias[i] += dyr[i];
                    sum_dxhat += dxhat[i];
                    sum_dxhat_xhat += dxhat[i] * xhat[i];
                }
                let (a, b) = (sum_dxhat / nf, sum_dxhat_xhat / nf);
                for i in 0..n {
                    dx[r * n + i] = rs * (dxhat[i] - a - xhat[i] * b);
                }
            }
            if let Some(gx) = slot(nodes, *x) {
                add_slices(gx, &dx);
            }
            if let Some(gg) = slot(nodes, *gain) {
                add_slices(gg, &dgain);
            }
            if let Some(gb) = slot(nodes, *bias) {
                add_slices(gb, &dbias);
            }
        }
        Op::Gelu(x) => unary_backward(nodes, *x, dy, gelu_grad),
        Op::Elu(x) => unary_backward(nodes, *x, dy, |v| if v > T::zero() { T::one() } else { v.exp() }),
        Op::Softplus(x) => unary_backward(nodes, *x, dy, sigmoid),
        Op::Dropout { x, mask } => {
            if let Some(g) = slot(nodes, *x) {
                g.iter_mut()
                    .zip(dy.iter().zip(mask))
                    .for_each(|(g, (d, m))| *g += *d * *m);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
            drop,
        } => attention_backward(nodes, *q, *k, *v, *heads, probs, drop.as_deref(), dy),
        Op::WeightedSum { x, weights } => {
            let d = dy[0];
            if let Some(g) = slot(nodes, *x) {
                g.iter_mut().zip(weights).for_each(|(g, w)| *g += d * *w);
            }
        }
        Op::RegionMae {
            pred,
            target,
            row_scale,
        } => {
            let d = dy[0];
            let n = nodes[pred.0].value.shape()[1];
            let p = nodes[pred.0].value.data().to_vec();
            if let Some(g) = slot(nodes, *pred) {
                for (i, gi) in g.iter_mut().enumerate() {
                    let diff = p[i] - target[i];
                    let sign = if diff > T::zero() {
                        T::one()
                    } else if diff < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *gi += d * row_scale[i / n] * sign;
                }
            }
        }
    }
}

fn add_slices<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += *b);
}

fn unary_backward<T: Scalar>(nodes: &mut [Node<T>], x: Var, dy: &[T], deriv: fn(T) -> T) {
    if !nodes[x.0].needs_grad {
        return;
    }
    let local: Vec<T> = nodes[x.0]
        .value
        .data()
        .iter()
        .zip(dy)
        .map(|(v, d)| deriv(*v) * *d)
        .collect();
    let mut tmp = nodes[x.0].grad.take();
    add_into(&mut tmp, &local);
    nodes[x.0].grad = tmp;
}

/// Gradients of `C = A B` for `A: [m, k]`, `B: [k, n]`.
fn matmul_backward<T: Scalar>(
    nodes: &mut [Node<T>],
    a: Var,
    b: Var,
    dy: &[T],
    m: usize,
    k: usize,
    n: usize,
) {
    if nodes[a.0].needs_grad {
        let bv = nodes[b.0].value.data().to_vec();
        let ga = slot(nodes, a).unwrap();
        gemm(
            T::one(),
            MatRef::row_major(dy, m, n),
            MatRef::row_major(&bv, k, n).t(),
            T::one(),
            MatMut::row_major(ga, m, k),
        );
    }
    if nodes[b.0].needs_grad {
        let av = nodes[a.0].value.data().to_vec();
        let gb = slot(nodes, b).unwrap();
        gemm(
            T::one(),
            MatRef::row_major(&av, m, k).t(),
            MatRef::row_major(dy, m, n),
            T::one(),
            MatMut::row_major(gb, k, n),
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    nodes: &mut [Node<T>],
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    probs: &[T],
    drop: Option<&[T]>,
    dy: &[T],
) {
    let (s, d) = nodes[q.0].value.dims2().unwrap();
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let qv = nodes[q.0].value.data().to_vec();
    let kv = nodes[k.0].value.data().to_vec();
    let vv = nodes[v.0].value.data().to_vec();
    let mut dq = vec![T::zero(); s * d];
    let mut dk = vec![T::zero(); s * d];
    let mut dv = vec![T::zero(); s * d];
    let mut dp = vec![T::zero(); s * s];
    let mut pd = vec![T::zero(); s * s];
    for h in 0..heads {
        let p = &probs[h * s * s..(h + 1) * s * s];
        let mask = drop.map(|m| &m[h * s * s..(h + 1) * s * s]);
        // effective weights after dropout
        let pe: &[T] = match mask {
            Some(m) => {
                pd.iter_mut().zip(p.iter().zip(m)).for_each(|(o, (a, b))| *o = *a * *b);
                &pd
            }
            None => p,
        };
        // dV_h = P_e^T dO_h
        gemm(
            T::one(),
            MatRef::row_major(pe, s, s).t(),
            MatRef::block(dy, s, d, h * dh, dh),
            T::zero(),
            MatMut::block(&mut dv, s, d, h * dh, dh),
        );
        // dP_e = dO_h V_h^T
        gemm(
            T::one(),
            MatRef::block(dy, s, d, h * dh, dh),
            MatRef::block(&vv, s, d, h * dh, dh).t(),
            T::zero(),
            MatMut::row_major(&mut dp, s, s),
        );
        if let Some(m) = mask {
            dp.iter_mut().zip(m).for_each(|(a, b)| *a *= *b);
        }
        // softmax backward, row by row
        for (dpr, pr) in dp.chunks_mut(s).zip(p.chunks(s)) {
            let dot: T = dpr.iter().zip(pr).map(|(a, b)| *a * *b).sum();
            dpr.iter_mut().zip(pr).for_each(|(g, pv)| *g = *pv * (*g - dot));
        }
        gemm(
            scale,
            MatRef::row_major(&dp, s, s),
            MatRef::block(&kv, s, d, h * dh, dh),
            T::zero(),
            MatMut::block(&mut dq, s, d, h * dh, dh),
        );
        gemm(
            scale,
            MatRef::row_major(&dp, s, s).t(),
            MatRef::block(&qv, s, d, h * dh, dh),
            T::zero(),
            MatMut::block(&mut dk, s, d, h * dh, dh),
        );
    }
    for (var, grad) in [(q, dq), (k, dk), (v, dv)] {
        if let Some(g) = slot(nodes, var) {
            add_slices(g, &grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn activation_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((gelu(-10.0f64)).abs() < 1e-20);
        assert_eq!(elu(2.0f64), 2.0);
        assert!((elu(-1.0f64) - (-1.0f64).exp_m1()).abs() < 1e-15);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn matmul_matches_loops() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &a));
        let y = g.constant(t(&[3, 4], &b));
        let z = g.matmul(x, y).unwrap();
        for r in 0..2 {
            for c in 0..4 {
                let want: f64 = (0..3).map(|k| a[r * 3 + k] * b[k * 4 + c]).sum();
                assert!((g.value(z).get2(r, c) - want).abs() < 1e-12);
            }
        }
        assert!(matches!(g.matmul(y, y), Err(Error::Shape(_))));
    }

    #[test]
    fn inference_graph_ignores_dropout() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.dropout(x, 0.9);
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn backward_reaches_inputs_only() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, -2.0]));
        let c = g.constant(t(&[1, 2], &[3.0, 4.0]));
        let s = g.add(x, c).unwrap();
        let s = g.scale(s, 2.0);
        let total = g.sum(s);
        g.backward(total).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
        assert!(g.grad(c).is_none());
    }

    proptest! {
        #[test]
        fn attention_rows_are_distributions(vals in prop::collection::vec(-3.0f64..3.0, 24)) {
            let q = t(&[3, 8], &vals);
            let w = attention_weights(&q, &q, 2).unwrap();
            for row in w.chunks(3) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn layer_norm_standardizes_rows(vals in prop::collection::vec(-5.0f64..5.0, 16)) {
            prop_assume!(vals[..8].iter().any(|v| (v - vals[0]).abs() > 1e-3));
            prop_assume!(vals[8..].iter().any(|v| (v - vals[8]).abs() > 1e-3));
            let mut g = Graph::new();
            let x = g.constant(t(&[2, 8], &vals));
            let gain = g.constant(Tensor::full(&[8], 1.0));
            let bias = g.constant(Tensor::zeros(&[8]));
            let y = g.layer_norm(x, gain, bias).unwrap();
            for row in g.value(y).data().chunks(8) {
                let mean = row.iter().sum::<f64>() / 8.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }
}
