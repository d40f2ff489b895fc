//! Selective state-space blocks run in both time directions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::layers::{Builder, Linear};
use crate::nn::{Activation, ParamId, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MambaConfig {
    pub d_model: usize,
    /// Inner width as a multiple of `d_model`.
    pub expand: usize,
    pub d_state: usize,
    pub d_conv: usize,
    /// Rank of the step-size projection.
    pub dt_rank: usize,
}

impl MambaConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            expand: 4,
            d_state: 16,
            d_conv: 4,
            dt_rank: d_model.div_ceil(16),
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.expand == 0 || self.d_state == 0 || self.d_conv == 0 || self.dt_rank == 0 {
            return Err(invalid!("state-space block sizes must be positive: {:?}", self));
        }
        Ok(())
    }
}

/// Inverse of softplus, for step-size bias initialization.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// One direction: input projection, causal depthwise conv, selective scan,
/// gated output projection.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    cfg: MambaConfig,
    pub in_proj: Linear,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub x_proj: Linear,
    pub dt_proj: Linear,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out_proj: Linear,
}

impl MambaBlock {
    pub fn new(b: &mut Builder<'_>, cfg: &MambaConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, di, n, r) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.dt_rank);
        let in_proj = Linear::new(&mut b.scope("in_proj"), d, 2 * di, false);
        let conv_w = b.uniform("conv.w", &[di, cfg.d_conv], cfg.d_conv);
        let conv_b = b.uniform("conv.b", &[di], cfg.d_conv);
        let x_proj = Linear::new(&mut b.scope("x_proj"), di, r + 2 * n, false);
        let dt_proj = {
            let mut s = b.scope("dt_proj");
            let w = s.uniform("w", &[r, di], r);
            // Initial step sizes log-uniform in [1e-3, 1e-1].
            let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
            let bias: Vec<f64> = (0..di)
                .map(|_| {
                    let dt = s.rng().uniform(lo, hi).exp();
                    softplus_inv(dt) as f32 as f64
                })
                .collect();
            let bias = s.tensor("b", Tensor::vector(bias));
            Linear { w, b: Some(bias) }
        };
        let a_init: Vec<f64> = (0..di)
            .flat_map(|_| (1..=n).map(|k| (k as f64).ln() as f32 as f64))
            .collect();
        let a_log = b.tensor("a_log", Tensor::new(vec![di, n], a_init)?);
        let d_skip = b.full("d_skip", &[di], 1.0);
        let out_proj = Linear::new(&mut b.scope("out_proj"), di, d, false);
        Ok(Self {
            cfg: *cfg,
            in_proj,
            conv_w,
            conv_b,
            x_proj,
            dt_proj,
            a_log,
            d_skip,
            out_proj,
        })
    }

    /// Selective scan over `x [T×d_inner]` with input-dependent step, input
    /// and output maps, plus the direct `D⊙x` path.
    pub fn ssm(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (n, r) = (self.cfg.d_state, self.cfg.dt_rank);
        let dbc = self.x_proj.forward(g, x)?;
        let dt_in = g.slice_cols(dbc, 0, r)?;
        let b = g.slice_cols(dbc, r, r + n)?;
        let c = g.slice_cols(dbc, r + n, r + 2 * n)?;
        let delta = self.dt_proj.forward(g, dt_in)?;
        let delta = g.act(delta, Activation::Softplus)?;
        let a_log = g.param(self.a_log);
        let a = g.act(a_log, Activation::Exp)?;
        let a = g.scale(a, -1.0)?;
        let y = g.selective_scan(x, delta, a, b, c)?;
        let xt = g.transpose(x)?;
        let d_skip = g.param(self.d_skip);
        let direct = g.mul_rows(xt, d_skip)?;
        let direct = g.transpose(direct)?;
        g.add(y, direct)
    }

    pub fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let di = self.cfg.d_inner();
        let xz = self.in_proj.forward(g, x)?;
        let xi = g.slice_cols(xz, 0, di)?;
        let z = g.slice_cols(xz, di, 2 * di)?;
        let w = g.param(self.conv_w);
        let b = g.param(self.conv_b);
        let xc = g.depthwise_causal_conv(xi, w, Some(b))?;
        let xc = g.act(xc, Activation::Silu)?;
        let y = self.ssm(g, xc)?;
        let gate = g.act(z, Activation::Silu)?;
        let y = g.mul(y, gate)?;
        self.out_proj.forward(g, y)
    }
}

/// Forward and backward blocks merged by a linear map of their
/// concatenation, added to the input.
#[derive(Clone, Debug)]
pub struct BiMamba {
    pub forward_block: MambaBlock,
    pub backward_block: MambaBlock,
    pub merge: Linear,
}

impl BiMamba {
    pub fn new(b: &mut Builder<'_>, cfg: &MambaConfig) -> Result<Self> {
        Ok(Self {
            forward_block: MambaBlock::new(&mut b.scope("fwd"), cfg)?,
            backward_block: MambaBlock::new(&mut b.scope("bwd"), cfg)?,
            merge: Linear::new(&mut b.scope("merge"), 2 * cfg.d_model, cfg.d_model, false),
        })
    }

    /// Merged bidirectional context `[T×d]`, without the residual.
    pub fn context(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let f = self.forward_block.forward(g, x)?;
        let xr = g.reverse_rows(x)?;
        let b = self.backward_block.forward(g, xr)?;
        let b = g.reverse_rows(b)?;
        let both = g.concat_cols(&[f, b])?;
        self.merge.forward(g, both)
    }

    pub fn forward(&self, g: &mut Tape<'_>, x: Var) -> Result<Var> {
        let m = self.context(g, x)?;
        g.add(x, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.01, 0.1, 2.0] {
            let x = softplus_inv(y);
            assert!((Activation::Softplus.apply(x) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
