//! Amplitude normalization over whole recordings (population moments).

use crate::error::{Error, Result};

/// Mean and population standard deviation.
pub fn moments(signal: &[f64]) -> (f64, f64) {
    if signal.is_empty() {
        return (0.0, 0.0);
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_flat(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * mean.abs().max(1.0)
}

/// Limits samples to `μ ± kσ` of the input. Flat signals pass through.
pub fn clip_sd(signal: &[f64], k: f64) -> Vec<f64> {
    let (mean, sd) = moments(signal);
    if is_flat(mean, sd) {
        return signal.to_vec();
    }
    let (lo, hi) = (mean - k * sd, mean + k * sd);
    signal
        .iter()
        .map(|&x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                x
            }
        })
        .collect()
}

pub fn zscore_recording(signal: &[f64]) -> Result<Vec<f64>> {
    let (mean, sd) = moments(signal);
    if signal.is_empty() || is_flat(mean, sd) {
        return Err(Error::Degenerate(format!(
            "recording of {} samples has zero variance",
            signal.len()
        )));
    }
    Ok(signal.iter().map(|x| (x - mean) / sd).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_zscore() {
        let z = zscore_recording(&[1.0, 2.0, 3.0]).unwrap();
        let s = (1.5f64).sqrt();
        assert!((z[0] + s).abs() < 1e-15 && z[1].abs() < 1e-15 && (z[2] - s).abs() < 1e-15);
    }

    #[test]
    fn flat_inputs() {
        assert!(matches!(zscore_recording(&[4.0; 10]), Err(Error::Degenerate(_))));
        assert_eq!(clip_sd(&[0.0; 5], 3.0), vec![0.0; 5]);
    }
}
