//! PPG encoder: raw and augmented streams through residual conv stacks,
//! bidirectional cross-stream attention, a learned stream gate, and dilated
//! temporal convolutions over the epochs of a window.

use serde::{Deserialize, Serialize};

use super::{channel_norm, check_window, pool_epochs, EncoderOutput, StageHead};
use crate::dsp::moments;
use crate::error::{invalid, shape_err, Result};
use crate::nn::layers::{AttentionBlock, BlockConfig, Builder, Conv1d, LayerNorm, Linear, NormPlacement};
use crate::nn::{Activation, ConvGeom, Tape, Tensor, Var};

/// Residual depth used for a window of `t` epochs.
pub fn depth_for_window(t: usize) -> usize {
    match t {
        0 | 1 => 4,
        2 => 5,
        3..=10 => 6,
        11..=20 => 7,
        _ => 8,
    }
}

/// First difference (leading sample repeated) standardized over the whole
/// window; a flat difference gives zeros.
pub fn augment_ppg(window: &Tensor) -> Result<Tensor> {
    if window.rank() != 2 || window.numel() == 0 {
        return Err(shape_err!("PPG window {:?}", window.shape()));
    }
    let x = window.data();
    let diff: Vec<f64> = (0..x.len())
        .map(|i| if i == 0 { 0.0 } else { x[i] - x[i - 1] })
        .collect();
    let (mean, sd) = moments(&diff);
    let flat = sd <= 1e-12 * mean.abs().max(1.0);
    let data = diff
        .iter()
        .map(|v| if flat { 0.0 } else { (v - mean) / sd })
        .collect();
    Tensor::new(window.shape().to_vec(), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpgConfig {
    pub epoch_len: usize,
    pub window: usize,
    /// Residual layers per stream; each halves the time axis.
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    pub feature_dim: usize,
    pub attn_blocks: usize,
    pub attn_heads: usize,
    pub attn_ffn: usize,
    pub placement: NormPlacement,
    pub temporal_kernel: usize,
    pub temporal_dilations: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    /// Fixed raw-stream weight in place of the learned gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_override: Option<f64>,
}

impl PpgConfig {
    pub fn full(window: usize) -> Self {
        Self {
            epoch_len: 1024,
            window,
            depth: depth_for_window(window),
            channels: 224,
            kernel: 7,
            feature_dim: 256,
            attn_blocks: 2,
            attn_heads: 8,
            attn_ffn: 512,
            placement: NormPlacement::Post,
            temporal_kernel: 3,
            temporal_dilations: vec![1, 2],
            activation: Activation::Silu,
            dropout: 0.1,
            gate_override: None,
        }
    }

    pub fn tiny(window: usize) -> Self {
        Self {
            channels: 4,
            feature_dim: 32,
            attn_heads: 4,
            attn_ffn: 64,
            dropout: 0.0,
            ..Self::full(window)
        }
    }

    /// Tiny model on short epochs for finite-difference checks.
    pub fn micro(window: usize, epoch_len: usize, depth: usize) -> Self {
        Self {
            epoch_len,
            depth,
            channels: 3,
            kernel: 3,
            feature_dim: 8,
            attn_heads: 2,
            attn_ffn: 8,
            ..Self::tiny(window)
        }
    }

    /// Tokens each epoch contributes after the residual stack.
    pub fn tokens_per_epoch(&self) -> usize {
        self.epoch_len >> self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(invalid!("window must hold at least one epoch"));
        }
        if self.depth >= usize::BITS as usize
            || !self.epoch_len.is_multiple_of(1 << self.depth)
            || self.tokens_per_epoch() == 0
        {
            return Err(invalid!(
                "epoch of {} samples is not divisible by 2^{}",
                self.epoch_len,
                self.depth
            ));
        }
        if self.kernel.is_multiple_of(2) || self.temporal_kernel.is_multiple_of(2) {
            return Err(invalid!("kernels must have odd width"));
        }
        if let Some(w) = self.gate_override {
            if !(0.0..=1.0).contains(&w) {
                return Err(invalid!("gate override {} outside [0, 1]", w));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid!("dropout {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ResidualLayer {
    down: Conv1d,
    norm: LayerNorm,
    conv: Conv1d,
    skip: Conv1d,
}

impl ResidualLayer {
    fn new(b: &mut Builder<'_>, c: usize, k: usize) -> Self {
        let pad = k / 2;
        Self {
            down: Conv1d::new(&mut b.scope("down"), c, c, k, ConvGeom::new(2, pad), true),
            norm: LayerNorm::new(&mut b.scope("norm"), c),
            conv: Conv1d::new(&mut b.scope("conv"), c, c, k, ConvGeom::new(1, pad), true),
            skip: Conv1d::new(&mut b.scope("skip"), c, c, 1, ConvGeom::new(2, 0), true),
        }
    }

    fn forward(&self, g: &mut Tape<'_>, x: Var, act: Activation) -> Result<Var> {
        let h = self.down.forward(g, x)?;
        let h = channel_norm(g, &self.norm, h)?;
        let h = g.act(h, act)?;
        let h = self.conv.forward(g, h)?;
        let s = self.skip.forward(g, x)?;
        g.add(h, s)
    }
}

/// Conv stack over one continuous stream, ending in `[N×d]` tokens.
#[derive(Clone, Debug)]
struct Stream {
    stem: Conv1d,
    layers: Vec<ResidualLayer>,
    proj: Linear,
}

impl Stream {
    fn new(b: &mut Builder<'_>, cfg: &PpgConfig) -> Self {
        let c = cfg.channels;
        Self {
            stem: Conv1d::new(&mut b.scope("stem"), 1, c, cfg.kernel, ConvGeom::new(1, cfg.kernel / 2), true),
            layers: (0..cfg.depth)
                .map(|i| ResidualLayer::new(&mut b.scope(&format!("layer{i}")), c, cfg.kernel))
                .collect(),
            proj: Linear::new(&mut b.scope("proj"), c, cfg.feature_dim, true),
        }
    }

    fn forward(&self, g: &mut Tape<'_>, signal: &Tensor, act: Activation) -> Result<Var> {
        let x = g.input(signal.clone().reshape(&[1, signal.numel()])?);
        let h = self.stem.forward(g, x)?;
        let mut h = g.act(h, act)?;
        for layer in &self.layers {
            h = layer.forward(g, h, act)?;
        }
        let tokens = g.transpose(h)?;
        self.proj.forward(g, tokens)
    }
}

/// One round of attention in both directions between the streams.
#[derive(Clone, Debug)]
pub struct CrossStreamBlock {
    raw: AttentionBlock,
    aug: AttentionBlock,
}

impl CrossStreamBlock {
    fn new(b: &mut Builder<'_>, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            raw: AttentionBlock::new(&mut b.scope("raw"), cfg)?,
            aug: AttentionBlock::new(&mut b.scope("aug"), cfg)?,
        })
    }

    /// Each stream queries the other; both updates read the inputs.
    pub fn forward(&self, g: &mut Tape<'_>, raw: Var, aug: Var) -> Result<(Var, Var)> {
        if g.value(raw).shape() != g.value(aug).shape() {
            return Err(shape_err!(
                "stream tokens {:?} and {:?}",
                g.value(raw).shape(),
                g.value(aug).shape()
            ));
        }
        let r = self.raw.forward(g, raw, Some(aug))?;
        let a = self.aug.forward(g, aug, Some(raw))?;
        Ok((r, a))
    }
}

#[derive(Clone, Debug)]
struct TemporalConv {
    conv: Conv1d,
}

#[derive(Clone, Debug)]
pub struct PpgEncoder {
    cfg: PpgConfig,
    raw: Stream,
    aug: Stream,
    cross: Vec<CrossStreamBlock>,
    gate: Linear,
    temporal: Vec<TemporalConv>,
    head: StageHead,
}

impl PpgEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &PpgConfig) -> Result<Self> {
        cfg.validate()?;
        let block = BlockConfig {
            dim: cfg.feature_dim,
            heads: cfg.attn_heads,
            ffn_dim: cfg.attn_ffn,
            activation: cfg.activation,
            placement: cfg.placement,
            dropout: cfg.dropout,
        };
        let d = cfg.feature_dim;
        Ok(Self {
            cfg: cfg.clone(),
            raw: Stream::new(&mut b.scope("raw"), cfg),
            aug: Stream::new(&mut b.scope("aug"), cfg),
            cross: (0..cfg.attn_blocks)
                .map(|i| CrossStreamBlock::new(&mut b.scope(&format!("cross{i}")), &block))
                .collect::<Result<_>>()?,
            gate: Linear::new(&mut b.scope("gate"), 2 * d, 1, true),
            temporal: cfg
                .temporal_dilations
                .iter()
                .enumerate()
                .map(|(i, &dil)| TemporalConv {
                    conv: Conv1d::new(
                        &mut b.scope(&format!("temporal{i}")),
                        d,
                        d,
                        cfg.temporal_kernel,
                        ConvGeom::new(1, dil * (cfg.temporal_kernel / 2)).dilated(dil),
                        true,
                    ),
                })
                .collect(),
            head: StageHead::new(&mut b.scope("head"), d),
        })
    }

    pub fn config(&self) -> &PpgConfig {
        &self.cfg
    }

    /// Stream tokens `(raw, aug)`, each `[T·n×d]`.
    pub fn stream_tokens(&self, g: &mut Tape<'_>, window: &Tensor) -> Result<(Var, Var)> {
        check_window(window, self.cfg.window, self.cfg.epoch_len)?;
        let act = self.cfg.activation;
        let raw = self.raw.forward(g, window, act)?;
        let aug = self.aug.forward(g, &augment_ppg(window)?, act)?;
        Ok((raw, aug))
    }

    pub fn cross_stream_attention(&self, g: &mut Tape<'_>, raw: Var, aug: Var) -> Result<(Var, Var)> {
        self.cross
            .iter()
            .try_fold((raw, aug), |(r, a), block| block.forward(g, r, a))
    }

    /// Raw-stream weight `[1×1]` in `[0, 1]`.
    pub fn stream_weight(&self, g: &mut Tape<'_>, raw: Var, aug: Var) -> Result<Var> {
        if let Some(w) = self.cfg.gate_override {
            return Ok(g.input(Tensor::matrix(1, 1, vec![w])?));
        }
        let d = g.value(raw).cols();
        let mr = g.mean_rows(raw)?;
        let mr = g.reshape(mr, &[1, d])?;
        let ma = g.mean_rows(aug)?;
        let ma = g.reshape(ma, &[1, d])?;
        let both = g.concat_cols(&[mr, ma])?;
        let logit = self.gate.forward(g, both)?;
        g.act(logit, Activation::Sigmoid)
    }

    pub fn forward(&self, g: &mut Tape<'_>, window: &Tensor) -> Result<EncoderOutput> {
        let (raw, aug) = self.stream_tokens(g, window)?;
        let (raw, aug) = self.cross_stream_attention(g, raw, aug)?;
        let w = self.stream_weight(g, raw, aug)?;
        let complement = g.affine(w, -1.0, 1.0)?;
        let r = g.scale_by(raw, w)?;
        let a = g.scale_by(aug, complement)?;
        let fused = g.add(r, a)?;
        let feats = pool_epochs(g, fused, self.cfg.tokens_per_epoch())?;
        // Dilated residual convolutions along the epoch axis.
        let mut h = g.transpose(feats)?;
        for block in &self.temporal {
            let c = block.conv.forward(g, h)?;
            let c = g.act(c, self.cfg.activation)?;
            h = g.add(h, c)?;
        }
        let features = g.transpose(h)?;
        let probs = self.head.forward(g, features)?;
        Ok(EncoderOutput { features, probs })
    }
}
