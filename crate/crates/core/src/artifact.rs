//! Trained models on disk.
//!
//! An artifact `name` is a JSON sidecar `name.json` describing the model and,
//! when it has parameters, a binary checkpoint `name.sfus`. Fusion sidecars
//! record the content hashes of the encoder checkpoints they were trained
//! against; loading fails if those files have changed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Hypnogram, Stage, SubjectEpochs};
use crate::dsp::build_windows;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{invalid, Error, Result};
use crate::fusion::{score_fusion, AlphaSearch, FusionConfig, FusionInput, FusionModel, Strategy};
use crate::metrics::{argmax_stages, measures_mae, EvalReport};
use crate::nn::{checkpoint, ParamStore, SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderRef {
    pub path: PathBuf,
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArtifactMeta {
    Encoder {
        config: EncoderConfig,
        content_hash: String,
        params: usize,
    },
    Fusion {
        strategy: Strategy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<FusionConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<AlphaSearch>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content_hash: Option<String>,
        params: usize,
        sceeg: EncoderRef,
        ppg: EncoderRef,
    },
}

/// `(sidecar, checkpoint)` paths of the artifact named by `path`, with or
/// without an extension.
pub fn artifact_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("sfus"))
}

fn write_meta(path: &Path, meta: &ArtifactMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(artifact_paths(path).0, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<ArtifactMeta> {
    let (meta, _) = artifact_paths(path);
    let bytes = std::fs::read(&meta).map_err(|e| Error::Checkpoint(format!("{}: {e}", meta.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn save_encoder(path: &Path, encoder: &Encoder, store: &ParamStore) -> Result<ArtifactMeta> {
    let meta = ArtifactMeta::Encoder {
        config: encoder.config(),
        content_hash: checkpoint::content_hash(store),
        params: store.count(),
    };
    write_meta(path, &meta)?;
    checkpoint::save(store, &artifact_paths(path).1)?;
    Ok(meta)
}

/// Rebuilds the parameter layout from `config` and fills it from `ckpt`,
/// which must match it exactly.
fn restore(ckpt: &Path, expected_hash: &str, build: impl FnOnce(&mut ParamStore) -> Result<()>) -> Result<ParamStore> {
    let saved = checkpoint::load(ckpt)?;
    let hash = checkpoint::content_hash(&saved);
    if hash != expected_hash {
        return Err(Error::Checkpoint(format!(
            "{} has content hash {hash}, sidecar records {expected_hash}",
            ckpt.display()
        )));
    }
    let mut store = ParamStore::new();
    build(&mut store)?;
    let loaded = store.load_matching(&saved)?;
    if loaded != store.len() || loaded != saved.len() {
        return Err(Error::Checkpoint(format!(
            "{} holds {} tensors, the configured model has {}",
            ckpt.display(),
            saved.len(),
            store.len()
        )));
    }
    Ok(store)
}

pub fn load_encoder(path: &Path) -> Result<(Encoder, ParamStore)> {
    match read_meta(path)? {
        ArtifactMeta::Encoder {
            config, content_hash, ..
        } => {
            let mut encoder = None;
            let store = restore(&artifact_paths(path).1, &content_hash, |s| {
                encoder = Some(config.build(s, &mut SeededRng::new(0))?);
                Ok(())
            })?;
            Ok((encoder.expect("built"), store))
        }
        ArtifactMeta::Fusion { .. } => Err(invalid!("{} is a fusion model, not an encoder", path.display())),
    }
}

/// Encoder references are stored relative to the sidecar when possible.
fn encoder_ref(fusion_path: &Path, encoder_path: &Path) -> Result<EncoderRef> {
    let (_, ckpt) = artifact_paths(encoder_path);
    let store = checkpoint::load(&ckpt)?;
    let base = fusion_path.parent().unwrap_or(Path::new(""));
    let rel = pathdiff(encoder_path, base);
    Ok(EncoderRef {
        path: rel,
        content_hash: checkpoint::content_hash(&store),
    })
}

fn pathdiff(target: &Path, base: &Path) -> PathBuf {
    match (std::path::absolute(target), std::path::absolute(base)) {
        (Ok(t), Ok(b)) => t.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(t),
        _ => target.to_path_buf(),
    }
}

fn resolve(fusion_path: &Path, r: &EncoderRef) -> PathBuf {
    if r.path.is_absolute() {
        r.path.clone()
    } else {
        fusion_path.parent().unwrap_or(Path::new("")).join(&r.path)
    }
}

/// A trained fusion head, or the fusion weight for score fusion.
pub enum FusionHead {
    Score(AlphaSearch),
    Learned(FusionModel, ParamStore),
}

pub fn save_fusion(path: &Path, head: &FusionHead, sceeg_path: &Path, ppg_path: &Path) -> Result<ArtifactMeta> {
    let sceeg = encoder_ref(path, sceeg_path)?;
    let ppg = encoder_ref(path, ppg_path)?;
    let meta = match head {
        FusionHead::Score(search) => ArtifactMeta::Fusion {
            strategy: Strategy::Score,
            config: None,
            alpha: Some(search.clone()),
            content_hash: None,
            params: 0,
            sceeg,
            ppg,
        },
        FusionHead::Learned(model, store) => {
            checkpoint::save(store, &artifact_paths(path).1)?;
            ArtifactMeta::Fusion {
                strategy: model.strategy(),
                config: Some(model.config().clone()),
                alpha: None,
                content_hash: Some(checkpoint::content_hash(store)),
                params: store.count(),
                sceeg,
                ppg,
            }
        }
    };
    write_meta(path, &meta)?;
    Ok(meta)
}

/// Any model that maps aligned windows of both modalities to stages.
pub enum Predictor {
    Encoder(Encoder, ParamStore),
    Fusion {
        sceeg: (Encoder, ParamStore),
        ppg: (Encoder, ParamStore),
        head: FusionHead,
    },
}

fn load_checked(fusion_path: &Path, r: &EncoderRef) -> Result<(Encoder, ParamStore)> {
    let path = resolve(fusion_path, r);
    let (enc, store) = load_encoder(&path)?;
    let hash = checkpoint::content_hash(&store);
    if hash != r.content_hash {
        return Err(Error::Checkpoint(format!(
            "encoder {} changed since fusion training ({hash} vs {})",
            path.display(),
            r.content_hash
        )));
    }
    Ok((enc, store))
}

impl Predictor {
    /// Loads an encoder or fusion artifact, with the encoders a fusion
    /// artifact refers to.
    pub fn load(path: &Path) -> Result<Self> {
        match read_meta(path)? {
            ArtifactMeta::Encoder { .. } => {
                let (e, s) = load_encoder(path)?;
                Ok(Predictor::Encoder(e, s))
            }
            ArtifactMeta::Fusion {
                strategy,
                config,
                alpha,
                content_hash,
                sceeg,
                ppg,
                ..
            } => {
                let sceeg = load_checked(path, &sceeg)?;
                let ppg = load_checked(path, &ppg)?;
                let head = match (strategy, alpha, config, content_hash) {
                    (Strategy::Score, Some(a), _, _) => FusionHead::Score(a),
                    (s, _, Some(cfg), Some(hash)) if s != Strategy::Score => {
                        let mut model = None;
                        let store = restore(&artifact_paths(path).1, &hash, |st| {
                            model = Some(FusionModel::new(&cfg, s, st, &mut SeededRng::new(0))?);
                            Ok(())
                        })?;
                        FusionHead::Learned(model.expect("built"), store)
                    }
                    _ => return Err(Error::Checkpoint(format!("{}: incomplete fusion sidecar", path.display()))),
                };
                Ok(Predictor::Fusion { sceeg, ppg, head })
            }
        }
    }

    pub fn window(&self) -> usize {
        match self {
            Predictor::Encoder(e, _) => e.config().window(),
            Predictor::Fusion { sceeg, .. } => sceeg.0.config().window(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Predictor::Encoder(e, _) => e.config().modality().to_string(),
            Predictor::Fusion { head, .. } => match head {
                FusionHead::Score(_) => "Score fusion".into(),
                FusionHead::Learned(m, _) => match m.strategy() {
                    Strategy::Mamba => "Mamba-enhanced fusion".into(),
                    _ => "Cross-attention fusion".into(),
                },
            },
        }
    }

    pub fn params(&self) -> usize {
        match self {
            Predictor::Encoder(_, s) => s.count(),
            Predictor::Fusion { head, .. } => match head {
                FusionHead::Score(_) => 0,
                FusionHead::Learned(_, s) => s.count(),
            },
        }
    }

    fn window_probs(&self, sceeg: &Tensor, ppg: &Tensor) -> Result<Tensor> {
        match self {
            Predictor::Encoder(e, s) => {
                let x = match e.config().modality() {
                    crate::dsp::Modality::ScEeg => sceeg,
                    crate::dsp::Modality::Ppg => ppg,
                };
                Ok(e.infer(s, x)?.1)
            }
            Predictor::Fusion { sceeg: se, ppg: pe, head } => {
                let (fs, ps) = se.0.infer(&se.1, sceeg)?;
                let (fp, pp) = pe.0.infer(&pe.1, ppg)?;
                match head {
                    FusionHead::Score(a) => score_fusion(&pp, &ps, a.alpha),
                    FusionHead::Learned(m, s) => m.infer(s, &FusionInput { sceeg: fs, ppg: fp }),
                }
            }
        }
    }

    /// Stages for the windowed prefix of one subject's night.
    pub fn predict_subject(&self, subject: &SubjectEpochs) -> Result<Vec<Stage>> {
        let t = self.window();
        let id = &subject.subject_id;
        let s = build_windows(&subject.sceeg, t, t, crate::dsp::Modality::ScEeg, id)?;
        let p = build_windows(&subject.ppg, t, t, crate::dsp::Modality::Ppg, id)?;
        let mut out = Vec::with_capacity(s.len() * t);
        for (ws, wp) in s.iter().zip(&p) {
            out.extend(argmax_stages(&self.window_probs(&ws.epochs, &wp.epochs)?)?);
        }
        Ok(out)
    }
}

/// Epoch-level scores over all subjects plus the per-subject sleep-measure
/// errors of the predicted hypnograms.
pub fn evaluate_subjects(predictor: &Predictor, subjects: &[&SubjectEpochs]) -> Result<EvalReport> {
    use rayon::prelude::*;
    let predicted: Vec<Vec<Stage>> = subjects
        .par_iter()
        .map(|s| predictor.predict_subject(s))
        .collect::<Result<_>>()?;
    evaluate_hypnograms(&predictor.name(), subjects, &predicted)
}

/// Scores predicted stage sequences against each subject's reference; a
/// prediction may cover only a prefix of the night.
pub fn evaluate_hypnograms(name: &str, subjects: &[&SubjectEpochs], predicted: &[Vec<Stage>]) -> Result<EvalReport> {
    if subjects.len() != predicted.len() {
        return Err(invalid!("{} subjects and {} predictions", subjects.len(), predicted.len()));
    }
    let mut all_pred = Vec::new();
    let mut all_truth = Vec::new();
    let mut hyp_pred = Vec::new();
    let mut hyp_truth = Vec::new();
    for (s, p) in subjects.iter().zip(predicted) {
        if p.len() > s.stages.len() {
            return Err(Error::Format(format!(
                "{}: {} predicted epochs for a {}-epoch night",
                s.subject_id,
                p.len(),
                s.stages.len()
            )));
        }
        if p.is_empty() {
            continue;
        }
        let truth = &s.stages[..p.len()];
        all_pred.extend_from_slice(p);
        all_truth.extend_from_slice(truth);
        hyp_pred.push(Hypnogram::new(s.subject_id.clone(), p.clone()));
        hyp_truth.push(Hypnogram::new(s.subject_id.clone(), truth.to_vec()));
    }
    let mut report = EvalReport::from_predictions(name, &all_pred, &all_truth)?;
    report.measures_mae = Some(measures_mae(&hyp_pred, &hyp_truth)?);
    Ok(report)
}
