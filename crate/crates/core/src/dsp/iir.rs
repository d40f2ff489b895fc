//! IIR design by analog prototype and bilinear transform, realized as
//! cascaded second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One direct-form II transposed section with `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// State `(s1, s2)` at which a constant input `u` produces a constant
    /// output; returns the state and that output.
    fn steady_state(&self, u: f64) -> ([f64; 2], f64) {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let y = gain * u;
        let s2 = self.b[2] * u - self.a[1] * y;
        let s1 = y - self.b[0] * u;
        ([s1, s2], y)
    }
}

/// How a cascade is run over a finite signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPhase {
    /// Single forward pass.
    #[default]
    Causal,
    /// Forward then backward pass; squares the magnitude response.
    ZeroPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterCascade {
    pub sections: Vec<Biquad>,
}

impl FilterCascade {
    /// Complex response at `freq_hz` for sampling rate `rate_hz`.
    pub fn response(&self, freq_hz: f64, rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn dc_gain(&self) -> f64 {
        self.response(0.0, 1.0).norm()
    }

    fn run(&self, signal: &mut [f64]) {
        let Some(&first) = signal.first() else { return };
        let mut input = first;
        for sec in &self.sections {
            // Start at the steady state for the first sample so that an
            // offset does not ring through the cascade.
            let ([mut s1, mut s2], out) = sec.steady_state(input);
            input = out;
            let [b0, b1, b2] = sec.b;
            let [a1, a2] = sec.a;
            for v in signal.iter_mut() {
                let x = *v;
                let y = b0 * x + s1;
                s1 = b1 * x - a1 * y + s2;
                s2 = b2 * x - a2 * y;
                *v = y;
            }
        }
    }

    pub fn filter(&self, signal: &[f64], phase: FilterPhase) -> Vec<f64> {
        let mut out = signal.to_vec();
        self.run(&mut out);
        if phase == FilterPhase::ZeroPhase {
            out.reverse();
            self.run(&mut out);
            out.reverse();
        }
        out
    }

    /// Response to a unit impulse from a zero state.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut h = vec![0.0; len];
        if len == 0 {
            return h;
        }
        h[0] = 1.0;
        for sec in &self.sections {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in h.iter_mut() {
                let x = *v;
                let y = sec.b[0] * x + s1;
                s1 = sec.b[1] * x - sec.a[0] * y + s2;
                s2 = sec.b[2] * x - sec.a[1] * y;
                *v = y;
            }
        }
        h
    }

    /// Concatenates two cascades into one.
    pub fn then(mut self, other: FilterCascade) -> FilterCascade {
        self.sections.extend(other.sections);
        self
    }

    fn scale(&mut self, k: f64) {
        if let Some(s) = self.sections.first_mut() {
            s.b.iter_mut().for_each(|b| *b *= k);
        }
    }
}

/// Zeros and poles of an analog transfer function; gain is normalized later.
struct AnalogZp {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
}

/// Chebyshev type II prototype with its stopband edge at 1 rad/s.
fn cheby2_prototype(order: usize, atten_db: f64) -> AnalogZp {
    let n = order as f64;
    let ripple = 1.0 / (10f64.powf(0.1 * atten_db) - 1.0).sqrt();
    let mu = (1.0 / ripple).asinh() / n;
    let mut zeros = Vec::new();
    let mut poles = Vec::new();
    let mut m = -(order as i64) + 1;
    while m < order as i64 {
        let theta = PI * m as f64 / (2.0 * n);
        if m != 0 {
            zeros.push(Complex64::new(0.0, 1.0 / theta.sin()));
        }
        let p = -Complex64::from_polar(1.0, theta);
        let warped = Complex64::new(mu.sinh() * p.re, mu.cosh() * p.im);
        poles.push(1.0 / warped);
        m += 2;
    }
    AnalogZp { zeros, poles }
}

fn butterworth_poles(order: usize) -> Vec<Complex64> {
    let n = order as f64;
    (0..order)
        .map(|k| Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n)))
        .collect()
}

/// Prewarped analog angular frequency for a digital edge.
fn prewarp(freq_hz: f64, rate_hz: f64) -> f64 {
    2.0 * rate_hz * (PI * freq_hz / rate_hz).tan()
}

/// Maps analog roots to the z-plane and groups them into sections. Missing
/// zeros (those at infinity) land at `z = -1`.
fn bilinear_sections(analog: AnalogZp, rate_hz: f64) -> FilterCascade {
    let fs2 = 2.0 * rate_hz;
    let map = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let poles: Vec<Complex64> = analog.poles.iter().map(map).collect();
    let mut zeros: Vec<Complex64> = analog.zeros.iter().map(map).collect();
    zeros.resize(poles.len().max(zeros.len()), Complex64::new(-1.0, 0.0));

    let mut pole_pairs = conjugate_pairs(&poles);
    let mut zero_pairs = conjugate_pairs(&zeros);
    // Poles far from the unit circle first; each takes the closest zeros.
    pole_pairs.sort_by(|a, b| {
        let da = 1.0 - a[0].norm();
        let db = 1.0 - b[0].norm();
        db.total_cmp(&da)
    });
    let mut sections = Vec::with_capacity(pole_pairs.len());
    for pp in pole_pairs {
        let best = (0..zero_pairs.len())
            .min_by(|&i, &j| {
                let di = (zero_pairs[i][0] - pp[0]).norm();
                let dj = (zero_pairs[j][0] - pp[0]).norm();
                di.total_cmp(&dj)
            })
            .map(|i| zero_pairs.swap_remove(i));
        let zp = best.unwrap_or([Complex64::new(0.0, 0.0); 2]);
        sections.push(Biquad {
            b: quadratic(zp),
            a: {
                let q = quadratic(pp);
                [q[1], q[2]]
            },
        });
    }
    FilterCascade { sections }
}

/// Coefficients of `(1 - r0 z⁻¹)(1 - r1 z⁻¹)`.
fn quadratic(r: [Complex64; 2]) -> [f64; 3] {
    [1.0, -(r[0] + r[1]).re, (r[0] * r[1]).re]
}

/// Groups roots into conjugate pairs; leftover reals pair with each other
/// and a final odd real pairs with a root at the origin.
fn conjugate_pairs(roots: &[Complex64]) -> Vec<[Complex64; 2]> {
    const TOL: f64 = 1e-12;
    let mut pairs: Vec<[Complex64; 2]> = roots
        .iter()
        .filter(|r| r.im > TOL)
        .map(|r| [*r, r.conj()])
        .collect();
    let mut reals: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= TOL).map(|r| r.re).collect();
    reals.sort_by(f64::total_cmp);
    for chunk in reals.chunks(2) {
        let second = chunk.get(1).copied().unwrap_or(0.0);
        pairs.push([Complex64::new(chunk[0], 0.0), Complex64::new(second, 0.0)]);
    }
    pairs
}

fn check_edge(freq_hz: f64, rate_hz: f64, what: &str) -> Result<()> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(invalid!("sampling rate {} Hz", rate_hz));
    }
    if !(freq_hz > 0.0 && freq_hz < rate_hz / 2.0) {
        return Err(invalid!(
            "{} {} Hz outside (0, {}) Hz for sampling rate {} Hz",
            what,
            freq_hz,
            rate_hz / 2.0,
            rate_hz
        ));
    }
    Ok(())
}

/// Stopband edge of the Chebyshev lowpass relative to the nominal cutoff.
pub const STOPBAND_RATIO: f64 = 1.25;

/// Chebyshev type II lowpass: equiripple stopband of `stopband_atten_db`
/// starting at `STOPBAND_RATIO × cutoff_hz`, unit gain at DC.
pub fn design_cheby2_lowpass(
    order: usize,
    cutoff_hz: f64,
    stopband_atten_db: f64,
    rate_hz: f64,
) -> Result<FilterCascade> {
    if order == 0 {
        return Err(invalid!("filter order must be positive"));
    }
    if stopband_atten_db <= 0.0 {
        return Err(invalid!("stopband attenuation {} dB", stopband_atten_db));
    }
    check_edge(cutoff_hz, rate_hz, "cutoff")?;
    let edge = cutoff_hz * STOPBAND_RATIO;
    check_edge(edge, rate_hz, "stopband edge")?;
    let w = prewarp(edge, rate_hz);
    let proto = cheby2_prototype(order, stopband_atten_db);
    let analog = AnalogZp {
        zeros: proto.zeros.iter().map(|z| z * w).collect(),
        poles: proto.poles.iter().map(|p| p * w).collect(),
    };
    let mut cascade = bilinear_sections(analog, rate_hz);
    let g = cascade.dc_gain();
    cascade.scale(1.0 / g);
    Ok(cascade)
}

pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, rate_hz: f64) -> Result<FilterCascade> {
    if order == 0 {
        return Err(invalid!("filter order must be positive"));
    }
    check_edge(cutoff_hz, rate_hz, "cutoff")?;
    let w = prewarp(cutoff_hz, rate_hz);
    let analog = AnalogZp {
        zeros: Vec::new(),
        poles: butterworth_poles(order).iter().map(|p| p * w).collect(),
    };
    let mut cascade = bilinear_sections(analog, rate_hz);
    let g = cascade.dc_gain();
    cascade.scale(1.0 / g);
    Ok(cascade)
}

pub fn design_butterworth_highpass(order: usize, cutoff_hz: f64, rate_hz: f64) -> Result<FilterCascade> {
    if order == 0 {
        return Err(invalid!("filter order must be positive"));
    }
    check_edge(cutoff_hz, rate_hz, "cutoff")?;
    let w = prewarp(cutoff_hz, rate_hz);
    let analog = AnalogZp {
        zeros: vec![Complex64::new(0.0, 0.0); order],
        poles: butterworth_poles(order).iter().map(|p| w / p).collect(),
    };
    let mut cascade = bilinear_sections(analog, rate_hz);
    let g = cascade.response(rate_hz / 2.0, rate_hz).norm();
    cascade.scale(1.0 / g);
    Ok(cascade)
}
