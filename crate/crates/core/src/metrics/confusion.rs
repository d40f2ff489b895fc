//! Agreement statistics over aligned predicted and reference labels.

use serde::{Deserialize, Serialize};

use crate::data::hypnogram::{Stage, N_STAGES};
use crate::error::{invalid, Error, Result};
use crate::nn::Tensor;

/// `counts[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(invalid!("confusion counts must be square and non-empty"));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Most probable stage of each row of `[T×4]`; ties go to the lower index.
pub fn argmax_stages(probs: &Tensor) -> Result<Vec<Stage>> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            Stage::from_index(best)
        })
        .collect()
}

/// Four-class confusion of aligned hypnogram epochs.
pub fn confusion(pred: &[Stage], truth: &[Stage]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(invalid!(
            "prediction has {} epochs, reference has {}",
            pred.len(),
            truth.len()
        ));
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("no epochs to compare".into()));
    }
    let mut cm = ConfusionMatrix::zeros(N_STAGES);
    for (p, t) in pred.iter().zip(truth) {
        cm.add(t.index(), p.index());
    }
    Ok(cm)
}

/// Cohen's κ. When chance agreement is total, κ is 1 for perfect
/// agreement and 0 otherwise.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Degenerate("empty confusion matrix".into()));
    }
    let n = total as f64;
    let observed = cm.trace() as f64 / n;
    let chance = (0..cm.classes())
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if chance >= 1.0 {
        return Ok(if observed >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - chance) / (1.0 - chance))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// The class never occurs in truth or never in predictions.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassScores>,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_metrics(cm: &ConfusionMatrix) -> ClassReport {
    let per_class = (0..cm.classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let (row, col) = (cm.row_sum(c), cm.col_sum(c));
            let recall = ratio(tp, row);
            let precision = ratio(tp, col);
            let f1 = if recall + precision > 0.0 {
                2.0 * recall * precision / (recall + precision)
            } else {
                0.0
            };
            ClassScores {
                recall,
                precision,
                f1,
                degenerate: row == 0 || col == 0,
            }
        })
        .collect();
    ClassReport {
        per_class,
        accuracy: ratio(cm.trace(), cm.total()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_two_class_example() {
        let cm = ConfusionMatrix::from_counts(vec![vec![10, 2], vec![3, 5]]).unwrap();
        // p_o = 15/20, p_e = (12·13 + 8·7)/400 = 212/400.
        let expected = (0.75 - 0.53) / (1.0 - 0.53);
        assert!((kappa(&cm).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn single_class_agreement() {
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 0], vec![0, 0]]).unwrap();
        assert_eq!(kappa(&cm).unwrap(), 1.0);
        assert!(kappa(&ConfusionMatrix::zeros(4)).is_err());
    }
}
