//! `SREC` recording container: magic, version, JSON header, f32 payload.
//!
//! ```text
//! "SREC" | version: u32 | header_len: u32 | header: utf-8 JSON | samples: f32 LE × n_samples
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{Modality, PreprocessedRecording, RawRecording};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"SREC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub subject_id: String,
    pub modality: Modality,
    pub channel: String,
    pub rate_hz: f64,
    pub preprocessed: bool,
    #[serde(default)]
    pub config_hash: Option<String>,
    pub n_samples: usize,
    /// Samples per epoch for preprocessed payloads.
    #[serde(default)]
    pub epoch_len: Option<usize>,
}

impl ContainerHeader {
    fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::Format(format!("header rate_hz {}", self.rate_hz)));
        }
        match (self.preprocessed, self.epoch_len) {
            (true, Some(l)) if l > 0 && self.n_samples.is_multiple_of(l) => Ok(()),
            (true, _) => Err(Error::Format(format!(
                "preprocessed payload of {} samples needs a dividing epoch_len",
                self.n_samples
            ))),
            (false, _) => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingContainer {
    pub header: ContainerHeader,
    pub samples: Vec<f32>,
}

impl RecordingContainer {
    pub fn from_raw(rec: &RawRecording) -> Self {
        Self {
            header: ContainerHeader {
                subject_id: rec.subject_id.clone(),
                modality: rec.modality,
                channel: rec.channel.clone(),
                rate_hz: rec.rate_hz,
                preprocessed: false,
                config_hash: None,
                n_samples: rec.samples.len(),
                epoch_len: None,
            },
            samples: rec.samples.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn from_preprocessed(rec: &PreprocessedRecording) -> Self {
        Self {
            header: ContainerHeader {
                subject_id: rec.subject_id.clone(),
                modality: rec.modality,
                channel: rec.channel.clone(),
                rate_hz: rec.rate_hz,
                preprocessed: true,
                config_hash: Some(rec.config_hash.clone()),
                n_samples: rec.epochs.numel(),
                epoch_len: Some(rec.epochs.cols()),
            },
            samples: rec.epochs.data().iter().map(|v| *v as f32).collect(),
        }
    }

    /// Entry point for signals exported by external tools.
    pub fn from_external(
        samples: &[f64],
        rate_hz: f64,
        modality: Modality,
        subject_id: &str,
        channel: &str,
    ) -> Result<Self> {
        Ok(Self::from_raw(&RawRecording::new(
            samples.to_vec(),
            rate_hz,
            modality,
            subject_id,
            channel,
        )?))
    }

    pub fn to_raw(&self) -> Result<RawRecording> {
        if self.header.preprocessed {
            return Err(Error::Format("container holds preprocessed epochs".into()));
        }
        RawRecording::new(
            self.samples.iter().map(|v| *v as f64).collect(),
            self.header.rate_hz,
            self.header.modality,
            self.header.subject_id.clone(),
            self.header.channel.clone(),
        )
    }

    pub fn to_preprocessed(&self) -> Result<PreprocessedRecording> {
        let (Some(len), true) = (self.header.epoch_len, self.header.preprocessed) else {
            return Err(Error::Format("container holds a raw recording".into()));
        };
        Ok(PreprocessedRecording {
            subject_id: self.header.subject_id.clone(),
            channel: self.header.channel.clone(),
            modality: self.header.modality,
            rate_hz: self.header.rate_hz,
            epochs: Tensor::new(
                vec![self.samples.len() / len, len],
                self.samples.iter().map(|v| *v as f64).collect(),
            )?,
            config_hash: self.header.config_hash.clone().unwrap_or_default(),
        })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = self.header.clone();
        header.n_samples = self.samples.len();
        header.validate()?;
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u32).to_le_bytes())?;
        out.write_all(&json)?;
        let mut payload = Vec::with_capacity(self.samples.len() * 4);
        for v in &self.samples {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an SREC container".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: ContainerHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Format(format!("header schema: {e}")))?;
        header.validate()?;
        let payload = &bytes[header_end..];
        if payload.len() != header.n_samples * 4 {
            return Err(Error::Format(format!(
                "payload has {} bytes, header declares {} samples",
                payload.len(),
                header.n_samples
            )));
        }
        let samples = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { header, samples })
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
