//! Parameterized building blocks assembled from tape operations.

use serde::{Deserialize, Serialize};

use super::kernels::{Activation, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::rng::SeededRng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Result};

pub const LN_EPS: f64 = 1e-5;

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut SeededRng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut SeededRng, prefix: &str) -> Self {
        Self {
            store,
            rng,
            prefix: prefix.to_string(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{}", self.prefix, leaf)
        }
    }

    pub fn uniform(&mut self, leaf: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let name = self.name(leaf);
        self.store.add_uniform(name, shape, fan_in, self.rng)
    }

    pub fn zeros(&mut self, leaf: &str, shape: &[usize]) -> ParamId {
        let name = self.name(leaf);
        self.store.add_zeros(name, shape)
    }

    pub fn full(&mut self, leaf: &str, shape: &[usize], value: f64) -> ParamId {
        let name = self.name(leaf);
        self.store.add_full(name, shape, value)
    }

    pub fn tensor(&mut self, leaf: &str, t: Tensor) -> ParamId {
        let name = self.name(leaf);
        self.store.add(name, t)
    }

    pub fn rng(&mut self) -> &mut SeededRng {
        self.rng
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, inp: usize, out: usize, bias: bool) -> Self {
        let w = b.uniform("w", &[inp, out], inp);
        let bias = bias.then(|| b.uniform("b", &[out], inp));
        Self { w, b: bias }
    }

    pub fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, d: usize) -> Self {
        Self {
            gamma: b.full("gamma", &[d], 1.0),
            beta: b.zeros("beta", &[d]),
        }
    }

    pub fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub geom: ConvGeom,
}

impl Conv1d {
    pub fn new(
        b: &mut Builder<'_>,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
    ) -> Self {
        let fan_in = cin * kernel;
        let w = b.uniform("w", &[cout, cin, kernel], fan_in);
        let bias = bias.then(|| b.uniform("b", &[cout], fan_in));
        Self { w, b: bias, geom }
    }

    pub fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.conv1d(x, w, b, self.geom)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder<'_>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid!("model width {} not divisible by {} heads", dim, heads));
        }
        Ok(Self {
            q: Linear::new(&mut b.scope("q"), dim, dim, true),
            k: Linear::new(&mut b.scope("k"), dim, dim, true),
            v: Linear::new(&mut b.scope("v"), dim, dim, true),
            out: Linear::new(&mut b.scope("out"), dim, dim, true),
            heads,
            dim,
        })
    }

    /// `query [T_q×d]` attends over `key`/`value [T_k×d]`.
    pub fn forward(&self, g: &mut Tape<'_>, query: Var, key: Var, value: Var) -> Result<Var> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, key)?;
        let v = self.v.forward(g, value)?;
        let heads = attention_heads(g, q, k, v, self.heads)?;
        self.out.forward(g, heads)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.out]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}

/// Splits projected `q, k, v` into heads, applies
/// `softmax(q_h·k_hᵀ/√d_h)·v_h` per head and concatenates the results.
pub fn attention_heads(g: &mut Tape<'_>, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let d = g.value(q).cols();
    if g.value(k).cols() != d || g.value(v).cols() != d || g.value(k).rows() != g.value(v).rows() {
        return Err(shape_err!(
            "attention q {:?} k {:?} v {:?}",
            g.value(q).shape(),
            g.value(k).shape(),
            g.value(v).shape()
        ));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(invalid!("width {} not divisible by {} heads", d, heads));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, lo, hi)?,
                g.slice_cols(k, lo, hi)?,
                g.slice_cols(v, lo, hi)?,
            )
        };
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores)?;
        outs.push(g.matmul(attn, vh)?);
    }
    if heads == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub act: Activation,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new(b: &mut Builder<'_>, dim: usize, hidden: usize, act: Activation, dropout: f64) -> Self {
        Self {
            up: Linear::new(&mut b.scope("up"), dim, hidden, true),
            down: Linear::new(&mut b.scope("down"), hidden, dim, true),
            act,
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.act(h, self.act)?;
        let h = g.dropout(h, self.dropout)?;
        self.down.forward(g, h)
    }
}

/// Where layer normalization sits relative to the residual branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// `LN(x + f(x))`
    #[default]
    Post,
    /// `x + f(LN(x))`
    Pre,
}

/// Attention followed by a feed-forward network, each wrapped in a residual
/// connection and layer normalization.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub placement: NormPlacement,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub activation: Activation,
    pub placement: NormPlacement,
    pub dropout: f64,
}

impl AttentionBlock {
    pub fn new(b: &mut Builder<'_>, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(&mut b.scope("attn"), cfg.dim, cfg.heads)?,
            ffn: FeedForward::new(&mut b.scope("ffn"), cfg.dim, cfg.ffn_dim, cfg.activation, cfg.dropout),
            norm1: LayerNorm::new(&mut b.scope("norm1"), cfg.dim),
            norm2: LayerNorm::new(&mut b.scope("norm2"), cfg.dim),
            placement: cfg.placement,
            dropout: cfg.dropout,
        })
    }

    /// Self-attention when `context` is `None`, cross-attention otherwise.
    pub fn forward(&self, g: &mut Tape<'_>, x: Var, context: Option<Var>) -> Result<Var> {
        match self.placement {
            NormPlacement::Post => {
                let ctx = context.unwrap_or(x);
                let a = self.attn.forward(g, x, ctx, ctx)?;
                let a = g.dropout(a, self.dropout)?;
                let h = g.add(x, a)?;
                let h = self.norm1.forward(g, h)?;
                let f = self.ffn.forward(g, h)?;
                let f = g.dropout(f, self.dropout)?;
                let o = g.add(h, f)?;
                self.norm2.forward(g, o)
            }
            NormPlacement::Pre => {
                let xn = self.norm1.forward(g, x)?;
                let ctx = context.unwrap_or(xn);
                let a = self.attn.forward(g, xn, ctx, ctx)?;
                let a = g.dropout(a, self.dropout)?;
                let h = g.add(x, a)?;
                let hn = self.norm2.forward(g, h)?;
                let f = self.ffn.forward(g, hn)?;
                let f = g.dropout(f, self.dropout)?;
                g.add(h, f)
            }
        }
    }
}
