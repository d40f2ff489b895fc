//! Epoch segmentation and multi-epoch windows.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Tensor;

/// Signal source of a recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "sceeg")]
    ScEeg,
    #[serde(rename = "ppg")]
    Ppg,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::ScEeg => "scEEG",
            Modality::Ppg => "PPG",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sceeg" | "eeg" => Ok(Modality::ScEeg),
            "ppg" => Ok(Modality::Ppg),
            other => Err(invalid!("unknown modality {:?}", other)),
        }
    }
}

/// Window lengths, in epochs, that the models are configured for.
pub const WINDOW_EPOCHS: [usize; 6] = [1, 2, 6, 10, 20, 60];

/// A window length in 30 s epochs. Parses `"3min"`, `"30s"`, `"90 s"` or a
/// bare epoch count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WindowLength(usize);

impl WindowLength {
    pub fn new(epochs: usize) -> Result<Self> {
        if epochs == 0 {
            return Err(invalid!("window must span at least one epoch"));
        }
        Ok(Self(epochs))
    }

    pub fn epochs(self) -> usize {
        self.0
    }

    pub fn seconds(self) -> usize {
        30 * self.0
    }
}

impl std::fmt::Display for WindowLength {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.seconds() {
            s if s % 60 == 0 => write!(f, "{} min", s / 60),
            s => write!(f, "{s} s"),
        }
    }
}

impl std::str::FromStr for WindowLength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(' ', "");
        let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
        let (num, unit) = t.split_at(split);
        let n: usize = num.parse().map_err(|_| invalid!("window length {:?}", s))?;
        let seconds = match unit {
            "" | "ep" | "epochs" => return Self::new(n),
            "s" | "sec" => n,
            "m" | "min" => 60 * n,
            "h" => 3600 * n,
            _ => return Err(invalid!("window length unit in {:?}", s)),
        };
        if seconds % 30 != 0 {
            return Err(invalid!("window length {:?} is not a whole number of epochs", s));
        }
        Self::new(seconds / 30)
    }
}

/// Splits a signal into `[n × epoch_len]`, dropping the trailing remainder.
pub fn segment_epochs(signal: &[f64], epoch_len: usize) -> Result<Tensor> {
    if epoch_len == 0 {
        return Err(invalid!("epoch length must be positive"));
    }
    let n = signal.len() / epoch_len;
    if n == 0 {
        return Err(Error::Degenerate(format!(
            "signal of {} samples is shorter than one {}-sample epoch",
            signal.len(),
            epoch_len
        )));
    }
    Tensor::new(vec![n, epoch_len], signal[..n * epoch_len].to_vec())
}

/// `T` consecutive epochs of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochWindow {
    /// `[T × epoch_len]`
    pub epochs: Tensor,
    pub modality: Modality,
    pub subject_id: String,
    pub start_epoch: usize,
}

impl EpochWindow {
    pub fn len(&self) -> usize {
        self.epochs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups `[n × L]` epochs into windows of `t` rows advancing by `stride`.
pub fn build_windows(
    epochs: &Tensor,
    t: usize,
    stride: usize,
    modality: Modality,
    subject_id: &str,
) -> Result<Vec<EpochWindow>> {
    if t == 0 || stride == 0 {
        return Err(invalid!("window length {} and stride {} must be positive", t, stride));
    }
    if epochs.rank() != 2 {
        return Err(invalid!("epochs must be a matrix, got shape {:?}", epochs.shape()));
    }
    let n = epochs.rows();
    if n < t {
        return Err(Error::Degenerate(format!(
            "{} epochs cannot fill a {}-epoch window",
            n, t
        )));
    }
    let l = epochs.cols();
    Ok((0..=n - t)
        .step_by(stride)
        .map(|start| EpochWindow {
            epochs: Tensor::new(vec![t, l], epochs.data()[start * l..(start + t) * l].to_vec())
                .expect("window slice matches its shape"),
            modality,
            subject_id: subject_id.to_string(),
            start_epoch: start,
        })
        .collect())
}
