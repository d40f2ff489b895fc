//! Late fusion of class probabilities.

use serde::{Deserialize, Serialize};

use crate::data::Stage;
use crate::error::{invalid, shape_err, Error, Result};
use crate::metrics::{argmax_stages, confusion, kappa};
use crate::nn::Tensor;

/// Weight of the PPG probabilities, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FusionWeight(f64);

impl FusionWeight {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid!("fusion weight {} outside [0, 1]", alpha));
        }
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FusionWeight {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FusionWeight> for f64 {
    fn from(w: FusionWeight) -> f64 {
        w.0
    }
}

/// The 11-point search grid `0, 0.1, …, 1`.
pub fn alpha_grid() -> Vec<FusionWeight> {
    (0..=10).map(|i| FusionWeight(i as f64 / 10.0)).collect()
}

const ROW_TOLERANCE: f64 = 1e-6;

fn check_stochastic(p: &Tensor, what: &str) -> Result<()> {
    for r in 0..p.rows() {
        let row = p.row(r);
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(invalid!("{} row {} is not a distribution (sum {})", what, r, sum));
        }
    }
    Ok(())
}

/// `α·P_ppg + (1−α)·P_sceeg`, row by row.
pub fn score_fusion(p_ppg: &Tensor, p_sceeg: &Tensor, alpha: FusionWeight) -> Result<Tensor> {
    if p_ppg.rank() != 2 || p_ppg.shape() != p_sceeg.shape() {
        return Err(shape_err!(
            "score fusion of {:?} and {:?}",
            p_ppg.shape(),
            p_sceeg.shape()
        ));
    }
    check_stochastic(p_ppg, "PPG")?;
    check_stochastic(p_sceeg, "scEEG")?;
    let a = alpha.value();
    let data = p_ppg
        .data()
        .iter()
        .zip(p_sceeg.data())
        .map(|(p, s)| a * p + (1.0 - a) * s)
        .collect();
    Tensor::new(p_ppg.shape().to_vec(), data)
}

/// Validation κ at every grid point and the chosen weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub alpha: FusionWeight,
    pub curve: Vec<(FusionWeight, f64)>,
}

/// Picks the grid weight with the highest κ; ties go to the smaller α.
pub fn grid_search_alpha(p_ppg: &[Tensor], p_sceeg: &[Tensor], labels: &[Stage]) -> Result<AlphaSearch> {
    if p_ppg.is_empty() || labels.is_empty() {
        return Err(Error::Degenerate("empty validation set".into()));
    }
    if p_ppg.len() != p_sceeg.len() {
        return Err(shape_err!(
            "{} PPG windows against {} scEEG windows",
            p_ppg.len(),
            p_sceeg.len()
        ));
    }
    let curve = alpha_grid()
        .into_iter()
        .map(|alpha| {
            let mut pred = Vec::with_capacity(labels.len());
            for (p, s) in p_ppg.iter().zip(p_sceeg) {
                pred.extend(argmax_stages(&score_fusion(p, s, alpha)?)?);
            }
            Ok((alpha, kappa(&confusion(&pred, labels)?)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = curve[0];
    for &(a, k) in &curve[1..] {
        if k > best.1 {
            best = (a, k);
        }
    }
    Ok(AlphaSearch { alpha: best.0, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_bounds() {
        assert!(FusionWeight::new(-0.1).is_err());
        assert!(FusionWeight::new(1.5).is_err());
        assert!(serde_json::from_str::<FusionWeight>("2.0").is_err());
        assert_eq!(alpha_grid().len(), 11);
        assert_eq!(alpha_grid()[4].value(), 0.4);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let good = Tensor::matrix(1, 4, vec![0.25; 4]).unwrap();
        let bad = Tensor::matrix(1, 4, vec![0.5; 4]).unwrap();
        let w = FusionWeight::new(0.5).unwrap();
        assert!(score_fusion(&good, &bad, w).is_err());
        assert!(score_fusion(&good, &good, w).is_ok());
    }
}
