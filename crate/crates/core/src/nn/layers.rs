use rand::Rng;

use super::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Affine layer with Xavier-uniform weights and zero bias.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add_xavier(format!("{name}.weight"), fan_in, fan_out, rng)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }

    /// Zero weight and bias, making the layer output identically zero.
    pub fn zero<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for id in [self.weight, self.bias] {
            store.get_mut(id).value.data_mut().fill(T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], T::one()))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Two-layer perceptron applied to each row independently:
/// `act(act(x W1 + b1) W2 + b2)`.
#[derive(Debug, Clone, Copy)]
pub struct FrameMlp {
    pub first: Linear,
    pub second: Linear,
}

impl FrameMlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, &format!("{name}.0"), input, width, rng)?,
            second: Linear::new(store, &format!("{name}.1"), width, width, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, store, x)?;
        let h = g.elu(h);
        let h = self.second.forward(g, store, h)?;
        Ok(g.elu(h))
    }
}

/// Multi-head self-attention with input and output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "model width {width} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), width, width, rng)?,
            key: Linear::new(store, &format!("{name}.key"), width, width, rng)?,
            value: Linear::new(store, &format!("{name}.value"), width, width, rng)?,
            output: Linear::new(store, &format!("{name}.output"), width, width, rng)?,
            heads,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let ctx = g.attention(q, k, v, self.heads, dropout)?;
        self.output.forward(g, store, ctx)
    }
}

/// Pre-norm encoder block:
/// `h = x + MHA(LN(x))`, `y = h + W2 gelu(W1 LN(h))`.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        ffn: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), width)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), width)?,
            ffn_in: Linear::new(store, &format!("{name}.ffn_in"), width, ffn, rng)?,
            ffn_out: Linear::new(store, &format!("{name}.ffn_out"), ffn, width, rng)?,
            dropout,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let width = store.value(self.attn_norm.gain).numel();
        if g.value(x).shape().last() != Some(&width) {
            return Err(Error::Shape(format!(
                "block expects width {width}, got {:?}",
                g.value(x).shape()
            )));
        }
        let n = self.attn_norm.forward(g, store, x)?;
        let a = self.attn.forward(g, store, n, self.dropout)?;
        let h = g.add(x, a)?;
        let n = self.ffn_norm.forward(g, store, h)?;
        let f = self.ffn_in.forward(g, store, n)?;
        let f = g.gelu(f);
        let f = g.dropout(f, self.dropout);
        let f = self.ffn_out.forward(g, store, f)?;
        g.add(h, f)
    }
}
