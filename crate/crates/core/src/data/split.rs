//! Subject-level train/validation/test partitions.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::SeededRng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Partition {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(invalid!("unknown split {:?}", other)),
        }
    }
}

impl SplitManifest {
    pub fn subjects(&self, part: Partition) -> &[String] {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Checks that no subject appears twice.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(invalid!("subject {} appears in more than one partition", id));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Shuffles subject ids by seed and cuts them by `fractions` (train, val, test).
pub fn split_subjects(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<SplitManifest> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| *f < 0.0) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(invalid!("split fractions {:?} must be non-negative and sum to 1", fractions));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(invalid!("duplicate subject ids"));
    }
    let n = ids.len();
    let n_val = (fv * n as f64).round() as usize;
    let n_test = (fs * n as f64).round() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    let needs = [(ft, n_train), (fv, n_val), (fs, n_test)];
    if n_val + n_test > n || needs.iter().any(|(f, c)| *f > 0.0 && *c == 0) {
        return Err(invalid!("{} subjects are too few for fractions {:?}", n, fractions));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    SeededRng::new(seed).shuffle(&mut order);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(SplitManifest { train: order, val, test })
}
