//! Combining the scEEG and PPG encoders: weighted probability averaging,
//! cross-attention over features, and cross-attention followed by a
//! bidirectional state-space layer.

pub mod cross;
pub mod mamba;
pub mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::StageHead;
use crate::error::{invalid, Error, Result};
use crate::nn::layers::{BlockConfig, Builder, NormPlacement};
use crate::nn::{Activation, ParamStore, SeededRng, Tape, Tensor, Var};

pub use cross::{CrossAttentionFusion, CrossBlock};
pub use mamba::{BiMamba, MambaBlock, MambaConfig};
pub use score::{alpha_grid, grid_search_alpha, score_fusion, AlphaSearch, FusionWeight};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Score,
    Xattn,
    Mamba,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Score, Strategy::Xattn, Strategy::Mamba];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Score => "score",
            Strategy::Xattn => "xattn",
            Strategy::Mamba => "mamba",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| invalid!("unknown fusion strategy {:?}", s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub mamba: MambaConfig,
}

impl FusionConfig {
    pub fn full() -> Self {
        Self {
            dim: 256,
            heads: 8,
            ffn_dim: 1024,
            blocks: 2,
            dropout: 0.1,
            mamba: MambaConfig::new(256),
        }
    }

    /// Same topology at width `dim`.
    pub fn tiny(dim: usize) -> Self {
        Self {
            dim,
            heads: 4,
            ffn_dim: 2 * dim,
            blocks: 2,
            dropout: 0.0,
            mamba: MambaConfig {
                expand: 2,
                d_state: 8,
                ..MambaConfig::new(dim)
            },
        }
    }

    fn block(&self) -> BlockConfig {
        BlockConfig {
            dim: self.dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            activation: Activation::Gelu,
            placement: NormPlacement::Post,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mamba.d_model != self.dim {
            return Err(invalid!(
                "state-space width {} differs from fusion width {}",
                self.mamba.d_model,
                self.dim
            ));
        }
        if self.blocks == 0 {
            return Err(invalid!("cross-attention fusion needs at least one block"));
        }
        self.mamba.validate()
    }
}

/// Aligned per-epoch features of one window from the frozen encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionInput {
    /// `[T×d]`
    pub sceeg: Tensor,
    /// `[T×d]`
    pub ppg: Tensor,
}

/// A trainable fusion head; parameters live under `fusion.`.
#[derive(Clone, Debug)]
pub struct FusionModel {
    strategy: Strategy,
    cfg: FusionConfig,
    pub cross: CrossAttentionFusion,
    pub mamba: Option<BiMamba>,
    pub head: StageHead,
}

impl FusionModel {
    pub fn new(cfg: &FusionConfig, strategy: Strategy, store: &mut ParamStore, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        if strategy == Strategy::Score {
            return Err(invalid!("score fusion has no trainable parameters"));
        }
        let mut b = Builder::new(store, rng, "fusion");
        let cross = CrossAttentionFusion::new(&mut b.scope("cross"), &cfg.block(), cfg.blocks)?;
        let mamba = match strategy {
            Strategy::Mamba => Some(BiMamba::new(&mut b.scope("mamba"), &cfg.mamba)?),
            _ => None,
        };
        let head = StageHead::new(&mut b.scope("head"), cfg.dim);
        Ok(Self {
            strategy,
            cfg: cfg.clone(),
            cross,
            mamba,
            head,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    /// Fused features `[T×d]`, with temporal context for the state-space variant.
    pub fn features(&self, g: &mut Tape<'_>, sceeg: Var, ppg: Var) -> Result<Var> {
        let fused = self.cross.forward(g, sceeg, ppg)?;
        match &self.mamba {
            Some(m) => m.forward(g, fused),
            None => Ok(fused),
        }
    }

    pub fn forward(&self, g: &mut Tape<'_>, sceeg: Var, ppg: Var) -> Result<Var> {
        let f = self.features(g, sceeg, ppg)?;
        self.head.forward(g, f)
    }

    pub fn forward_input(&self, g: &mut Tape<'_>, input: &FusionInput) -> Result<Var> {
        let s = g.input(input.sceeg.clone());
        let p = g.input(input.ppg.clone());
        self.forward(g, s, p)
    }

    pub fn infer(&self, store: &ParamStore, input: &FusionInput) -> Result<Tensor> {
        let mut g = Tape::new(store);
        let p = self.forward_input(&mut g, input)?;
        Ok(g.value(p).clone())
    }
}
