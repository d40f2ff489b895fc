//! Bidirectional cross-attention between the two modality feature sequences.

use crate::error::{shape_err, Result};
use crate::nn::layers::{AttentionBlock, BlockConfig, Builder, Linear};
use crate::nn::{Tape, Var};

/// One fusion block: each modality attends to the other, with its own
/// feed-forward and norms.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub sceeg: AttentionBlock,
    pub ppg: AttentionBlock,
}

impl CrossBlock {
    pub fn new(b: &mut Builder<'_>, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            sceeg: AttentionBlock::new(&mut b.scope("sceeg"), cfg)?,
            ppg: AttentionBlock::new(&mut b.scope("ppg"), cfg)?,
        })
    }

    /// Both directions read the block inputs.
    pub fn forward(&self, g: &mut Tape<'_>, s: Var, p: Var) -> Result<(Var, Var)> {
        let s2 = self.sceeg.forward(g, s, Some(p))?;
        let p2 = self.ppg.forward(g, p, Some(s))?;
        Ok((s2, p2))
    }
}

/// Stacked cross blocks followed by a projection of the concatenated streams.
#[derive(Clone, Debug)]
pub struct CrossAttentionFusion {
    pub blocks: Vec<CrossBlock>,
    pub proj: Linear,
}

impl CrossAttentionFusion {
    pub fn new(b: &mut Builder<'_>, cfg: &BlockConfig, blocks: usize) -> Result<Self> {
        Ok(Self {
            blocks: (0..blocks)
                .map(|i| CrossBlock::new(&mut b.scope(&format!("block{i}")), cfg))
                .collect::<Result<_>>()?,
            proj: Linear::new(&mut b.scope("proj"), 2 * cfg.dim, cfg.dim, true),
        })
    }

    /// Fused features `[T×d]` from aligned `[T×d]` inputs.
    pub fn forward(&self, g: &mut Tape<'_>, sceeg: Var, ppg: Var) -> Result<Var> {
        if g.value(sceeg).shape() != g.value(ppg).shape() {
            return Err(shape_err!(
                "scEEG features {:?} and PPG features {:?}",
                g.value(sceeg).shape(),
                g.value(ppg).shape()
            ));
        }
        let (s, p) = self
            .blocks
            .iter()
            .try_fold((sceeg, ppg), |(s, p), blk| blk.forward(g, s, p))?;
        let both = g.concat_cols(&[s, p])?;
        self.proj.forward(g, both)
    }
}
