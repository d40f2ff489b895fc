//! Sleep architecture measures derived from a hypnogram.

use serde::{Deserialize, Serialize};

use crate::data::hypnogram::{Hypnogram, Stage, N_STAGES};
use crate::error::{invalid, Error, Result};

pub const EPOCH_MINUTES: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleepMeasures {
    pub tst_min: f64,
    pub se_pct: f64,
    pub fr_light_pct: f64,
    pub fr_deep_pct: f64,
    pub fr_rem_pct: f64,
    /// No sleep was scored; SE and fractions are reported as 0.
    pub degenerate: bool,
}

impl SleepMeasures {
    pub fn values(&self) -> [f64; 5] {
        [self.tst_min, self.se_pct, self.fr_light_pct, self.fr_deep_pct, self.fr_rem_pct]
    }
}

pub const MEASURE_NAMES: [&str; 5] = ["TST", "SE", "FR_Light", "FR_Deep", "FR_REM"];

pub fn sleep_measures(stages: &[Stage]) -> Result<SleepMeasures> {
    if stages.is_empty() {
        return Err(Error::Degenerate("empty hypnogram".into()));
    }
    let mut counts = [0usize; N_STAGES];
    for s in stages {
        counts[s.index()] += 1;
    }
    let minutes = |s: Stage| counts[s.index()] as f64 * EPOCH_MINUTES;
    let tst = minutes(Stage::Light) + minutes(Stage::Deep) + minutes(Stage::Rem);
    if tst == 0.0 {
        return Ok(SleepMeasures {
            tst_min: 0.0,
            se_pct: 0.0,
            fr_light_pct: 0.0,
            fr_deep_pct: 0.0,
            fr_rem_pct: 0.0,
            degenerate: true,
        });
    }
    Ok(SleepMeasures {
        tst_min: tst,
        se_pct: tst / (tst + minutes(Stage::Wake)) * 100.0,
        fr_light_pct: minutes(Stage::Light) / tst * 100.0,
        fr_deep_pct: minutes(Stage::Deep) / tst * 100.0,
        fr_rem_pct: minutes(Stage::Rem) / tst * 100.0,
        degenerate: false,
    })
}

/// Mean absolute error per measure over subjects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuresMae {
    pub tst_min: f64,
    pub se_pct: f64,
    pub fr_light_pct: f64,
    pub fr_deep_pct: f64,
    pub fr_rem_pct: f64,
    pub subjects: usize,
}

impl MeasuresMae {
    pub fn values(&self) -> [f64; 5] {
        [self.tst_min, self.se_pct, self.fr_light_pct, self.fr_deep_pct, self.fr_rem_pct]
    }
}

pub fn measures_mae(predicted: &[Hypnogram], reference: &[Hypnogram]) -> Result<MeasuresMae> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(invalid!(
            "{} predicted and {} reference hypnograms",
            predicted.len(),
            reference.len()
        ));
    }
    let mut sums = [0.0; 5];
    for (p, r) in predicted.iter().zip(reference) {
        if p.subject_id != r.subject_id {
            return Err(invalid!("subject {} paired with {}", p.subject_id, r.subject_id));
        }
        let (mp, mr) = (sleep_measures(&p.stages)?, sleep_measures(&r.stages)?);
        for (s, (a, b)) in sums.iter_mut().zip(mp.values().iter().zip(mr.values())) {
            *s += (a - b).abs();
        }
    }
    let n = predicted.len() as f64;
    Ok(MeasuresMae {
        tst_min: sums[0] / n,
        se_pct: sums[1] / n,
        fr_light_pct: sums[2] / n,
        fr_deep_pct: sums[3] / n,
        fr_rem_pct: sums[4] / n,
        subjects: predicted.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_wake_is_degenerate() {
        let m = sleep_measures(&[Stage::Wake; 10]).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.values(), [0.0; 5]);
        assert!(sleep_measures(&[]).is_err());
    }

    #[test]
    fn mismatched_subjects_rejected() {
        let a = Hypnogram::new("a", vec![Stage::Light]);
        let b = Hypnogram::new("b", vec![Stage::Light]);
        assert!(measures_mae(&[a], &[b]).is_err());
    }
}
