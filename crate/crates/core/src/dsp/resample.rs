//! Rational polyphase resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

pub const KAISER_BETA: f64 = 8.6;
/// Kernel support measured in zero crossings of the anti-alias lowpass.
pub const TAPS_PER_PHASE: usize = 32;

/// Zeroth-order modified Bessel function of the first kind.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64, beta: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - u * u).sqrt()) / bessel_i0(beta)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest `up/down` within `1e-9` (relative) of `ratio`, by continued
/// fractions.
pub fn rational_ratio(ratio: f64) -> Result<(usize, usize)> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(invalid!("resampling ratio {}", ratio));
    }
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut x = ratio;
    for _ in 0..64 {
        let a = x.floor();
        let ai = a as u64;
        let (h2, k2) = (ai * h1 + h0, ai * k1 + k0);
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if ((h1 as f64 / k1 as f64) - ratio).abs() <= 1e-9 * ratio || k1 > 1 << 20 {
            break;
        }
        let frac = x - a;
        if frac < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    if h1 == 0 || k1 > 1 << 20 {
        return Err(invalid!("no small rational approximation for ratio {}", ratio));
    }
    let g = gcd(h1, k1);
    Ok(((h1 / g) as usize, (k1 / g) as usize))
}

/// Precomputed polyphase kernel for a fixed `up/down` pair.
#[derive(Clone, Debug)]
pub struct Resampler {
    up: usize,
    down: usize,
    /// Offset of the first tap relative to the integer input position.
    first_tap: isize,
    phases: Vec<Vec<f64>>,
}

impl Resampler {
    pub fn new(up: usize, down: usize) -> Result<Self> {
        if up == 0 || down == 0 {
            return Err(invalid!("resampling factors {}/{}", up, down));
        }
        let g = gcd(up as u64, down as u64) as usize;
        let (up, down) = (up / g, down / g);
        let cutoff = (up as f64 / down as f64).min(1.0);
        let half_width = (TAPS_PER_PHASE as f64 / 2.0) / cutoff;
        let reach = half_width.ceil() as isize;
        let first_tap = -reach + 1;
        let n_taps = (2 * reach) as usize;
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut w: Vec<f64> = (0..n_taps)
                    .map(|i| {
                        let dist = frac - (first_tap + i as isize) as f64;
                        cutoff * sinc(cutoff * dist) * kaiser(dist / half_width, KAISER_BETA)
                    })
                    .collect();
                // Unit DC gain for every phase.
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                w
            })
            .collect();
        Ok(Self {
            up,
            down,
            first_tap,
            phases,
        })
    }

    pub fn from_rates(from_hz: f64, to_hz: f64) -> Result<Self> {
        if !(from_hz > 0.0 && to_hz > 0.0) {
            return Err(invalid!("sampling rates must be positive ({} -> {})", from_hz, to_hz));
        }
        let (up, down) = rational_ratio(to_hz / from_hz)?;
        Self::new(up, down)
    }

    pub fn factors(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up + self.down / 2) / self.down
    }

    /// Resamples with edge values held beyond both ends.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let n_out = self.output_len(signal.len());
        if n_out == 0 {
            return Err(invalid!("resampling {} samples yields no output", signal.len()));
        }
        if self.up == 1 && self.down == 1 {
            return Ok(signal.to_vec());
        }
        let last = signal.len() as isize - 1;
        let out = (0..n_out)
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as isize + self.first_tap;
                let w = &self.phases[pos % self.up];
                let lo = base.max(0);
                let hi = (base + w.len() as isize - 1).min(last);
                if lo > base || hi < base + w.len() as isize - 1 {
                    w.iter()
                        .enumerate()
                        .map(|(i, wv)| wv * signal[(base + i as isize).clamp(0, last) as usize])
                        .sum()
                } else {
                    let s = &signal[base as usize..base as usize + w.len()];
                    w.iter().zip(s).map(|(a, b)| a * b).sum()
                }
            })
            .collect();
        Ok(out)
    }
}

pub fn resample(signal: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    Resampler::from_rates(from_hz, to_hz)?.apply(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continued_fraction_ratios() {
        assert_eq!(rational_ratio(100.0 / 256.0).unwrap(), (25, 64));
        assert_eq!(rational_ratio((1024.0 / 30.0) / 256.0).unwrap(), (2, 15));
        assert_eq!(rational_ratio(0.5).unwrap(), (1, 2));
        assert_eq!(rational_ratio(3.0).unwrap(), (3, 1));
    }

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(8.6) from tables.
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(8.6) / 750.461_159_563_165_9 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn length_contract() {
        assert_eq!(resample(&vec![0.0; 7680], 256.0, 1024.0 / 30.0).unwrap().len(), 1024);
        assert_eq!(resample(&vec![0.0; 7680], 256.0, 100.0).unwrap().len(), 3000);
        assert!(resample(&[1.0], 256.0, 10.0).is_err());
    }

    #[test]
    fn identity_ratio_copies() {
        let x = [1.0, -2.0, 3.5];
        assert_eq!(resample(&x, 50.0, 50.0).unwrap(), x);
    }
}
