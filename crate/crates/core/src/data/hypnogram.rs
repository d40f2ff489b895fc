//! Stage labels and per-night hypnograms.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const N_STAGES: usize = 4;

/// Four-class sleep stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Wake = 0,
    Light = 1,
    Deep = 2,
    Rem = 3,
}

impl Stage {
    pub const ALL: [Stage; N_STAGES] = [Stage::Wake, Stage::Light, Stage::Deep, Stage::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Stage::ALL
            .get(i)
            .copied()
            .ok_or_else(|| invalid!("stage index {} outside 0..{}", i, N_STAGES))
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Wake => "Wake",
            Stage::Light => "Light",
            Stage::Deep => "Deep",
            Stage::Rem => "REM",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Five-class clinical scoring label, plus the legacy stage 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AasmLabel {
    W,
    N1,
    N2,
    N3,
    S4,
    Rem,
}

impl FromStr for AasmLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W" | "WAKE" => Ok(AasmLabel::W),
            "N1" | "S1" => Ok(AasmLabel::N1),
            "N2" | "S2" => Ok(AasmLabel::N2),
            "N3" | "S3" => Ok(AasmLabel::N3),
            "S4" | "N4" => Ok(AasmLabel::S4),
            "REM" | "R" => Ok(AasmLabel::Rem),
            other => Err(Error::Format(format!("unknown scoring label {other:?}"))),
        }
    }
}

impl fmt::Display for AasmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AasmLabel::W => "W",
            AasmLabel::N1 => "N1",
            AasmLabel::N2 => "N2",
            AasmLabel::N3 => "N3",
            AasmLabel::S4 => "S4",
            AasmLabel::Rem => "REM",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    /// Treat legacy stage 4 as Deep instead of rejecting it.
    pub accept_s4: bool,
}

impl LabelMapping {
    pub fn map(&self, label: AasmLabel) -> Result<Stage> {
        match label {
            AasmLabel::W => Ok(Stage::Wake),
            AasmLabel::N1 | AasmLabel::N2 => Ok(Stage::Light),
            AasmLabel::N3 => Ok(Stage::Deep),
            AasmLabel::S4 if self.accept_s4 => Ok(Stage::Deep),
            AasmLabel::S4 => Err(Error::Format("legacy stage S4 is not accepted by this mapping".into())),
            AasmLabel::Rem => Ok(Stage::Rem),
        }
    }
}

/// Default mapping: W→Wake, N1/N2→Light, N3→Deep, REM→REM.
pub fn map_aasm_to_4class(label: AasmLabel) -> Result<Stage> {
    LabelMapping::default().map(label)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelScheme {
    Aasm5,
    #[default]
    Fused4,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypnogram {
    pub subject_id: String,
    pub stages: Vec<Stage>,
    pub source_scheme: LabelScheme,
    /// Original clinical labels when the night was scored in five classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aasm: Option<Vec<AasmLabel>>,
}

impl Hypnogram {
    pub fn new(subject_id: impl Into<String>, stages: Vec<Stage>) -> Self {
        Self {
            subject_id: subject_id.into(),
            stages,
            source_scheme: LabelScheme::Fused4,
            aasm: None,
        }
    }

    pub fn from_aasm(subject_id: impl Into<String>, labels: Vec<AasmLabel>, mapping: LabelMapping) -> Result<Self> {
        let stages = labels.iter().map(|l| mapping.map(*l)).collect::<Result<_>>()?;
        Ok(Self {
            subject_id: subject_id.into(),
            stages,
            source_scheme: LabelScheme::Aasm5,
            aasm: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// CSV with header `epoch_index,stage_label[,aasm]`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match &self.aasm {
            Some(labels) => {
                writeln!(out, "epoch_index,stage_label,aasm")?;
                for (i, (s, a)) in self.stages.iter().zip(labels).enumerate() {
                    writeln!(out, "{},{},{}", i, s.index(), a)?;
                }
            }
            None => {
                writeln!(out, "epoch_index,stage_label")?;
                for (i, s) in self.stages.iter().enumerate() {
                    writeln!(out, "{},{}", i, s.index())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(subject_id: &str, input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty hypnogram file".into()))??;
        let columns: Vec<&str> = header.trim().split(',').collect();
        let with_aasm = match columns.as_slice() {
            ["epoch_index", "stage_label"] => false,
            ["epoch_index", "stage_label", "aasm"] => true,
            _ => return Err(Error::Format(format!("unexpected hypnogram header {header:?}"))),
        };
        let mut stages = Vec::new();
        let mut aasm = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != columns.len() {
                return Err(Error::Format(format!("row {}: expected {} fields", row + 1, columns.len())));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad epoch index {:?}", row + 1, fields[0])))?;
            if idx != stages.len() {
                return Err(Error::Format(format!("row {}: epoch index {} out of sequence", row + 1, idx)));
            }
            let label: usize = fields[1]
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad stage {:?}", row + 1, fields[1])))?;
            stages.push(Stage::from_index(label).map_err(|e| Error::Format(e.to_string()))?);
            if with_aasm {
                aasm.push(fields[2].parse()?);
            }
        }
        Ok(Self {
            subject_id: subject_id.to_string(),
            stages,
            source_scheme: if with_aasm { LabelScheme::Aasm5 } else { LabelScheme::Fused4 },
            aasm: with_aasm.then_some(aasm),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(subject_id: &str, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(subject_id, std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_clinical_column() {
        let labels = vec![AasmLabel::W, AasmLabel::N1, AasmLabel::N3, AasmLabel::Rem];
        let h = Hypnogram::from_aasm("s7", labels, LabelMapping::default()).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch_index,stage_label,aasm\n0,0,W\n1,1,N1\n"));
        assert_eq!(Hypnogram::read_csv("s7", &buf[..]).unwrap(), h);
    }

    #[test]
    fn csv_rejects_gaps_and_bad_labels() {
        assert!(Hypnogram::read_csv("s", &b"epoch_index,stage_label\n0,0\n2,1\n"[..]).is_err());
        assert!(Hypnogram::read_csv("s", &b"epoch_index,stage_label\n0,7\n"[..]).is_err());
        assert!(Hypnogram::read_csv("s", &b"idx,label\n"[..]).is_err());
    }

    #[test]
    fn s4_requires_opt_in() {
        assert!(map_aasm_to_4class(AasmLabel::S4).is_err());
        let m = LabelMapping { accept_s4: true };
        assert_eq!(m.map(AasmLabel::S4).unwrap(), Stage::Deep);
    }
}
