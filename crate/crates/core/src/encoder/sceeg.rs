//! Single-channel EEG encoder: multi-resolution convolutions over each
//! epoch, self-attention over the resulting token map, then a transformer
//! across the epochs of a window.

use serde::{Deserialize, Serialize};

use super::{channel_norm, check_window, EncoderOutput, Pool, StageHead};
use crate::error::{invalid, Result};
use crate::nn::layers::{AttentionBlock, BlockConfig, Builder, Conv1d, LayerNorm, Linear, NormPlacement};
use crate::nn::{Activation, ConvGeom, ParamId, Tape, Tensor, Var};

/// One convolutional branch: a wide strided conv, pooling, two narrow convs,
/// pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub first_pool: Pool,
    pub inner_kernel: usize,
    pub inner_padding: usize,
    pub last_pool: Pool,
}

impl BranchConfig {
    /// Token count produced from an epoch of `len` samples.
    pub fn tokens(&self, len: usize) -> Result<usize> {
        let mut l = ConvGeom::new(self.stride, self.padding).out_len(len, self.kernel)?;
        l = self.first_pool.out_len(l);
        for _ in 0..2 {
            l = ConvGeom::new(1, self.inner_padding).out_len(l, self.inner_kernel)?;
        }
        Ok(self.last_pool.out_len(l))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceegConfig {
    pub epoch_len: usize,
    /// Epochs per window.
    pub window: usize,
    pub small: BranchConfig,
    pub large: BranchConfig,
    /// Channels after the first conv of each branch.
    pub stem_channels: usize,
    /// Channels of the token map.
    pub token_channels: usize,
    /// Squeeze-and-excitation over token channels.
    pub recalibrate: bool,
    pub se_reduction: usize,
    pub tce_dim: usize,
    pub tce_layers: usize,
    pub tce_heads: usize,
    pub tce_ffn: usize,
    pub feature_dim: usize,
    pub temporal_layers: usize,
    pub temporal_heads: usize,
    pub temporal_ffn: usize,
    /// Length of the learned position table.
    pub max_window: usize,
    pub activation: Activation,
    pub bias: bool,
    pub norm: bool,
    pub positional: bool,
    pub dropout: f64,
}

impl SceegConfig {
    pub fn full(window: usize) -> Self {
        Self {
            epoch_len: 3000,
            window,
            small: BranchConfig {
                kernel: 50,
                stride: 6,
                padding: 24,
                first_pool: Pool::new(8, 2, 4),
                inner_kernel: 8,
                inner_padding: 4,
                last_pool: Pool::new(4, 4, 2),
            },
            large: BranchConfig {
                kernel: 400,
                stride: 50,
                padding: 200,
                first_pool: Pool::new(4, 2, 2),
                inner_kernel: 7,
                inner_padding: 3,
                last_pool: Pool::new(2, 2, 1),
            },
            stem_channels: 64,
            token_channels: 128,
            recalibrate: true,
            se_reduction: 16,
            tce_dim: 128,
            tce_layers: 2,
            tce_heads: 8,
            tce_ffn: 512,
            feature_dim: 256,
            temporal_layers: 2,
            temporal_heads: 8,
            temporal_ffn: 1280,
            max_window: 60,
            activation: Activation::Gelu,
            bias: true,
            norm: true,
            positional: true,
            dropout: 0.1,
        }
    }

    /// Desk-scale model with the same topology.
    pub fn tiny(window: usize) -> Self {
        Self {
            stem_channels: 4,
            token_channels: 4,
            se_reduction: 2,
            tce_dim: 16,
            tce_layers: 1,
            tce_heads: 2,
            tce_ffn: 32,
            feature_dim: 32,
            temporal_layers: 2,
            temporal_heads: 4,
            temporal_ffn: 64,
            dropout: 0.0,
            ..Self::full(window)
        }
    }

    /// Tiny model on `epoch_len`-sample epochs with kernels scaled down to
    /// match, for finite-difference checks.
    pub fn micro(window: usize, epoch_len: usize) -> Self {
        Self {
            epoch_len,
            small: BranchConfig {
                kernel: 5,
                stride: 2,
                padding: 2,
                first_pool: Pool::new(4, 2, 2),
                inner_kernel: 3,
                inner_padding: 1,
                last_pool: Pool::new(4, 4, 2),
            },
            large: BranchConfig {
                kernel: 40,
                stride: 10,
                padding: 20,
                first_pool: Pool::new(2, 2, 1),
                inner_kernel: 3,
                inner_padding: 1,
                last_pool: Pool::new(2, 2, 1),
            },
            stem_channels: 3,
            token_channels: 4,
            tce_dim: 8,
            tce_heads: 2,
            tce_ffn: 8,
            feature_dim: 32,
            temporal_heads: 4,
            temporal_ffn: 16,
            max_window: 8,
            ..Self::tiny(window)
        }
    }

    /// Positively homogeneous variant: relu, no biases, norms or gating.
    pub fn homogeneous(mut self) -> Self {
        self.activation = Activation::Relu;
        self.bias = false;
        self.norm = false;
        self.recalibrate = false;
        self
    }

    pub fn tokens(&self) -> Result<(usize, usize)> {
        Ok((self.small.tokens(self.epoch_len)?, self.large.tokens(self.epoch_len)?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > self.max_window {
            return Err(invalid!(
                "window of {} epochs outside 1..={}",
                self.window,
                self.max_window
            ));
        }
        let (a, b) = self.tokens()?;
        if a == 0 || b == 0 {
            return Err(invalid!("epoch of {} samples yields no tokens", self.epoch_len));
        }
        if self.recalibrate && (self.se_reduction == 0 || self.token_channels < self.se_reduction) {
            return Err(invalid!(
                "recalibration reduction {} for {} channels",
                self.se_reduction,
                self.token_channels
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid!("dropout {}", self.dropout));
        }
        Ok(())
    }

    /// Whether the cross-epoch transformer exists for this window.
    pub fn has_temporal(&self) -> bool {
        self.window > 1 && self.temporal_layers > 0
    }
}

/// Conv, optional channel norm, activation.
#[derive(Clone, Debug)]
struct ConvUnit {
    conv: Conv1d,
    norm: Option<LayerNorm>,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn new(
        b: &mut Builder<'_>,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeom,
        cfg: &SceegConfig,
    ) -> Self {
        Self {
            conv: Conv1d::new(&mut b.scope("conv"), cin, cout, kernel, geom, cfg.bias),
            norm: cfg.norm.then(|| LayerNorm::new(&mut b.scope("norm"), cout)),
        }
    }

    fn forward(&self, g: &mut Tape<'_>, x: Var, act: Activation) -> Result<Var> {
        let mut h = self.conv.forward(g, x)?;
        if let Some(n) = &self.norm {
            h = channel_norm(g, n, h)?;
        }
        g.act(h, act)
    }
}

#[derive(Clone, Debug)]
struct Branch {
    cfg: BranchConfig,
    stem: ConvUnit,
    inner: [ConvUnit; 2],
}

impl Branch {
    fn new(b: &mut Builder<'_>, branch: BranchConfig, cfg: &SceegConfig) -> Self {
        let inner_geom = ConvGeom::new(1, branch.inner_padding);
        let (c1, c2) = (cfg.stem_channels, cfg.token_channels);
        Self {
            cfg: branch,
            stem: ConvUnit::new(
                &mut b.scope("stem"),
                1,
                c1,
                branch.kernel,
                ConvGeom::new(branch.stride, branch.padding),
                cfg,
            ),
            inner: [
                ConvUnit::new(&mut b.scope("inner0"), c1, c2, branch.inner_kernel, inner_geom, cfg),
                ConvUnit::new(&mut b.scope("inner1"), c2, c2, branch.inner_kernel, inner_geom, cfg),
            ],
        }
    }

    /// `[1×L]` signal to a `[C×N]` channel-major map.
    fn forward(&self, g: &mut Tape<'_>, x: Var, act: Activation) -> Result<Var> {
        let p = self.cfg.first_pool;
        let h = self.stem.forward(g, x, act)?;
        let mut h = g.max_pool1d(h, p.kernel, p.stride, p.padding)?;
        for unit in &self.inner {
            h = unit.forward(g, h, act)?;
        }
        let p = self.cfg.last_pool;
        g.max_pool1d(h, p.kernel, p.stride, p.padding)
    }
}

/// Channel gating from globally pooled tokens.
#[derive(Clone, Debug)]
struct Recalibration {
    squeeze: Linear,
    excite: Linear,
}

impl Recalibration {
    fn new(b: &mut Builder<'_>, channels: usize, reduction: usize, bias: bool) -> Self {
        let hidden = channels / reduction;
        Self {
            squeeze: Linear::new(&mut b.scope("squeeze"), channels, hidden, bias),
            excite: Linear::new(&mut b.scope("excite"), hidden, channels, bias),
        }
    }

    /// Rescales the channels of `x [C×N]`.
    fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let tokens = g.transpose(x)?;
        let pooled = g.mean_rows(tokens)?;
        let c = g.value(pooled).numel();
        let pooled = g.reshape(pooled, &[1, c])?;
        let h = self.squeeze.forward(g, pooled)?;
        let h = g.act(h, Activation::Relu)?;
        let h = self.excite.forward(g, h)?;
        let gate = g.act(h, Activation::Sigmoid)?;
        g.mul_rows(x, gate)
    }
}

#[derive(Clone, Debug)]
pub struct SceegEncoder {
    cfg: SceegConfig,
    small: Branch,
    large: Branch,
    recalibration: Option<Recalibration>,
    token_proj: Linear,
    tce: Vec<AttentionBlock>,
    epoch_proj: Linear,
    positions: Option<ParamId>,
    temporal: Vec<AttentionBlock>,
    head: StageHead,
}

impl SceegEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &SceegConfig) -> Result<Self> {
        cfg.validate()?;
        let mut m = b.scope("mrcnn");
        let small = Branch::new(&mut m.scope("small"), cfg.small, cfg);
        let large = Branch::new(&mut m.scope("large"), cfg.large, cfg);
        let recalibration = cfg.recalibrate.then(|| {
            Recalibration::new(&mut m.scope("se"), cfg.token_channels, cfg.se_reduction, cfg.bias)
        });
        let token_proj = Linear::new(&mut m.scope("token_proj"), cfg.token_channels, cfg.tce_dim, cfg.bias);
        let tce_block = BlockConfig {
            dim: cfg.tce_dim,
            heads: cfg.tce_heads,
            ffn_dim: cfg.tce_ffn,
            activation: cfg.activation,
            placement: NormPlacement::Post,
            dropout: cfg.dropout,
        };
        let tce = (0..cfg.tce_layers)
            .map(|i| AttentionBlock::new(&mut b.scope(&format!("tce{i}")), &tce_block))
            .collect::<Result<Vec<_>>>()?;
        let epoch_proj = Linear::new(&mut b.scope("epoch_proj"), cfg.tce_dim, cfg.feature_dim, cfg.bias);
        let (positions, temporal) = if cfg.has_temporal() {
            let block = BlockConfig {
                dim: cfg.feature_dim,
                heads: cfg.temporal_heads,
                ffn_dim: cfg.temporal_ffn,
                ..tce_block
            };
            let positions = cfg.positional.then(|| {
                let mut s = b.scope("temporal");
                s.uniform("positions", &[cfg.max_window, cfg.feature_dim], cfg.feature_dim)
            });
            let layers = (0..cfg.temporal_layers)
                .map(|i| AttentionBlock::new(&mut b.scope(&format!("temporal.layer{i}")), &block))
                .collect::<Result<Vec<_>>>()?;
            (positions, layers)
        } else {
            (None, Vec::new())
        };
        Ok(Self {
            cfg: cfg.clone(),
            small,
            large,
            recalibration,
            token_proj,
            tce,
            epoch_proj,
            positions,
            temporal,
            head: StageHead::new(&mut b.scope("head"), cfg.feature_dim),
        })
    }

    pub fn config(&self) -> &SceegConfig {
        &self.cfg
    }

    fn epoch_input(&self, g: &mut Tape<'_>, epoch: &[f64]) -> Result<Var> {
        if epoch.len() != self.cfg.epoch_len {
            return Err(invalid!(
                "epoch of {} samples, expected {}",
                epoch.len(),
                self.cfg.epoch_len
            ));
        }
        Ok(g.input(Tensor::matrix(1, epoch.len(), epoch.to_vec())?))
    }

    /// Token map `[N×tce_dim]` of one epoch: both branches concatenated
    /// along time, recalibrated and projected.
    pub fn tokens(&self, g: &mut Tape<'_>, epoch: &[f64]) -> Result<Var> {
        let x = self.epoch_input(g, epoch)?;
        let a = self.small.forward(g, x, self.cfg.activation)?;
        let b = self.large.forward(g, x, self.cfg.activation)?;
        let mut map = g.concat_cols(&[a, b])?;
        if let Some(r) = &self.recalibration {
            map = r.forward(g, map)?;
        }
        let tokens = g.transpose(map)?;
        self.token_proj.forward(g, tokens)
    }

    /// Self-attention refinement of a token sequence; shape preserved.
    pub fn tce_forward(&self, g: &mut Tape<'_>, tokens: Var) -> Result<Var> {
        self.tce
            .iter()
            .try_fold(tokens, |h, block| block.forward(g, h, None))
    }

    fn embed(&self, g: &mut Tape<'_>, tokens: Var) -> Result<Var> {
        let pooled = g.mean_rows(tokens)?;
        let d = g.value(pooled).numel();
        let pooled = g.reshape(pooled, &[1, d])?;
        self.epoch_proj.forward(g, pooled)
    }

    /// Convolutional embedding `[1×d]` of one epoch, without token attention.
    pub fn mrcnn_forward(&self, g: &mut Tape<'_>, epoch: &[f64]) -> Result<Var> {
        let tokens = self.tokens(g, epoch)?;
        self.embed(g, tokens)
    }

    /// Full per-epoch embedding `[1×d]`.
    pub fn epoch_forward(&self, g: &mut Tape<'_>, epoch: &[f64]) -> Result<Var> {
        let tokens = self.tokens(g, epoch)?;
        let tokens = self.tce_forward(g, tokens)?;
        self.embed(g, tokens)
    }

    /// Cross-epoch context over `[T×d]`; identity when the window has one epoch.
    pub fn temporal_forward(&self, g: &mut Tape<'_>, feats: Var) -> Result<Var> {
        let t = g.value(feats).rows();
        let mut h = feats;
        if let Some(pos) = self.positions {
            let table = g.param(pos);
            let rows = g.slice_rows(table, 0, t)?;
            h = g.add(h, rows)?;
        }
        self.temporal
            .iter()
            .try_fold(h, |h, block| block.forward(g, h, None))
    }

    pub fn forward(&self, g: &mut Tape<'_>, window: &Tensor) -> Result<EncoderOutput> {
        check_window(window, self.cfg.window, self.cfg.epoch_len)?;
        let epochs = (0..window.rows())
            .map(|t| self.epoch_forward(g, window.row(t)))
            .collect::<Result<Vec<_>>>()?;
        let feats = g.concat_rows(&epochs)?;
        let features = self.temporal_forward(g, feats)?;
        let probs = self.head.forward(g, features)?;
        Ok(EncoderOutput { features, probs })
    }
}
