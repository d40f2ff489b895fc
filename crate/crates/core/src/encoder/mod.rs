//! Unimodal window encoders producing per-epoch features and stage
//! probabilities.

pub mod ppg;
pub mod sceeg;

use serde::{Deserialize, Serialize};

use crate::data::N_STAGES;
use crate::dsp::Modality;
use crate::error::{shape_err, Result};
use crate::nn::layers::{Builder, LayerNorm, Linear};
use crate::nn::{ParamStore, SeededRng, Tape, Tensor, Var};

pub use ppg::{augment_ppg, depth_for_window, PpgConfig, PpgEncoder};
pub use sceeg::{SceegConfig, SceegEncoder};

/// Per-epoch features `[T×d]` and class probabilities `[T×4]` of one window.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub features: Var,
    pub probs: Var,
}

/// Max-pool geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }
}

/// Layer norm across channels of a channel-major map `x [C×L]`.
pub(crate) fn channel_norm(g: &mut Tape<'_>, norm: &LayerNorm, x: Var) -> Result<Var> {
    let t = g.transpose(x)?;
    let t = norm.forward(g, t)?;
    g.transpose(t)
}

/// Mean over each run of `per_epoch` consecutive rows, stacked to `[T×d]`.
pub(crate) fn pool_epochs(g: &mut Tape<'_>, tokens: Var, per_epoch: usize) -> Result<Var> {
    let (rows, cols) = (g.value(tokens).rows(), g.value(tokens).cols());
    if per_epoch == 0 || rows % per_epoch != 0 {
        return Err(shape_err!("{} tokens do not split into runs of {}", rows, per_epoch));
    }
    let parts = (0..rows / per_epoch)
        .map(|t| {
            let run = g.slice_rows(tokens, t * per_epoch, (t + 1) * per_epoch)?;
            let m = g.mean_rows(run)?;
            g.reshape(m, &[1, cols])
        })
        .collect::<Result<Vec<_>>>()?;
    g.concat_rows(&parts)
}

/// Linear map to stage logits followed by a row softmax.
#[derive(Clone, Debug)]
pub struct StageHead {
    pub proj: Linear,
}

impl StageHead {
    pub fn new(b: &mut Builder<'_>, dim: usize) -> Self {
        Self {
            proj: Linear::new(&mut b.scope("proj"), dim, N_STAGES, true),
        }
    }

    pub fn forward(&self, g: &mut Tape<'_>, features: Var) -> Result<Var> {
        let logits = self.proj.forward(g, features)?;
        g.softmax(logits)
    }
}

/// Configuration of either encoder, tagged by modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality", rename_all = "lowercase")]
pub enum EncoderConfig {
    Sceeg(SceegConfig),
    Ppg(PpgConfig),
}

impl EncoderConfig {
    pub fn modality(&self) -> Modality {
        match self {
            EncoderConfig::Sceeg(_) => Modality::ScEeg,
            EncoderConfig::Ppg(_) => Modality::Ppg,
        }
    }

    pub fn window(&self) -> usize {
        match self {
            EncoderConfig::Sceeg(c) => c.window,
            EncoderConfig::Ppg(c) => c.window,
        }
    }

    pub fn epoch_len(&self) -> usize {
        match self {
            EncoderConfig::Sceeg(c) => c.epoch_len,
            EncoderConfig::Ppg(c) => c.epoch_len,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            EncoderConfig::Sceeg(c) => c.feature_dim,
            EncoderConfig::Ppg(c) => c.feature_dim,
        }
    }

    /// Registers fresh parameters under `enc.` and returns the model.
    pub fn build(&self, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Encoder> {
        let mut b = Builder::new(store, rng, "enc");
        Ok(match self {
            EncoderConfig::Sceeg(c) => Encoder::Sceeg(SceegEncoder::new(&mut b, c)?),
            EncoderConfig::Ppg(c) => Encoder::Ppg(PpgEncoder::new(&mut b, c)?),
        })
    }
}

/// A built encoder; parameters live in the store it was built against.
#[derive(Clone, Debug)]
pub enum Encoder {
    Sceeg(SceegEncoder),
    Ppg(PpgEncoder),
}

impl Encoder {
    pub fn config(&self) -> EncoderConfig {
        match self {
            Encoder::Sceeg(e) => EncoderConfig::Sceeg(e.config().clone()),
            Encoder::Ppg(e) => EncoderConfig::Ppg(e.config().clone()),
        }
    }

    /// Encodes a window `[T×epoch_len]`.
    pub fn forward(&self, g: &mut Tape<'_>, window: &Tensor) -> Result<EncoderOutput> {
        match self {
            Encoder::Sceeg(e) => e.forward(g, window),
            Encoder::Ppg(e) => e.forward(g, window),
        }
    }

    /// Forward pass without gradients, returning `(F, P)` values.
    pub fn infer(&self, store: &ParamStore, window: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Tape::new(store);
        let out = self.forward(&mut g, window)?;
        Ok((g.value(out.features).clone(), g.value(out.probs).clone()))
    }
}

pub(crate) fn check_window(window: &Tensor, t: usize, len: usize) -> Result<()> {
    if window.rank() != 2 || window.rows() != t || window.cols() != len {
        return Err(shape_err!(
            "window {:?}, expected [{} × {}]",
            window.shape(),
            t,
            len
        ));
    }
    Ok(())
}
