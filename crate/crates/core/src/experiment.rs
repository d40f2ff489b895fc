//! End-to-end run on a synthetic cohort: unimodal encoders, then the three
//! fusion strategies over their frozen outputs.

use serde::{Deserialize, Serialize};

use crate::data::split::Partition;
use crate::data::{preprocess_cohort, split_subjects, synth_generate, SplitManifest, SubjectEpochs, SynthConfig};
use crate::dsp::{Modality, PreprocessConfig, WindowLength};
use crate::encoder::{Encoder, EncoderConfig, PpgConfig, SceegConfig};
use crate::error::{invalid, Error, Result};
use crate::fusion::{grid_search_alpha, score_fusion, AlphaSearch, FusionConfig, FusionModel, FusionWeight, Strategy};
use crate::metrics::{argmax_stages, format_params, EvalReport};
use crate::nn::{ParamStore, SeededRng, Tensor};
use crate::train::dataset::{cache_outputs, encoder_samples, fusion_samples, partition, CachedOutputs};
use crate::train::{evaluate, infer_ms, train, Sample, TrainConfig, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    /// Epochs per window.
    pub window: usize,
    pub split: (f64, f64, f64),
    pub sceeg: SceegConfig,
    pub ppg: PpgConfig,
    pub fusion: FusionConfig,
    pub encoder_training: TrainConfig,
    pub fusion_training: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let window = 6;
        let sceeg = SceegConfig::tiny(window);
        let ppg = PpgConfig::tiny(window);
        Self {
            seed: 1,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            window,
            split: (0.6, 0.2, 0.2),
            fusion: FusionConfig::tiny(sceeg.feature_dim),
            sceeg,
            ppg,
            encoder_training: TrainConfig {
                learning_rate: 2e-3,
                epochs: 8,
                batch_size: 8,
                ..TrainConfig::default()
            },
            fusion_training: TrainConfig {
                epochs: 30,
                batch_size: 8,
                patience: Some(8),
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Pins every random choice (cohort, split, initialization, batching)
    /// to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.encoder_training.seed = seed;
        self.fusion_training.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sceeg.window != self.window || self.ppg.window != self.window {
            return Err(invalid!("encoder windows must equal the experiment window {}", self.window));
        }
        if self.sceeg.feature_dim != self.fusion.dim || self.ppg.feature_dim != self.fusion.dim {
            return Err(invalid!("encoder feature widths must equal the fusion width {}", self.fusion.dim));
        }
        self.synth.validate()?;
        self.preprocess.validate()?;
        self.fusion.validate()
    }
}

/// One partition's windows for both modalities.
struct PartitionData {
    sceeg: Vec<Sample<Tensor>>,
    ppg: Vec<Sample<Tensor>>,
}

impl PartitionData {
    fn new(cohort: &[SubjectEpochs], split: &SplitManifest, part: Partition, window: usize) -> Result<Self> {
        let subjects = partition(cohort, split, part)?;
        Ok(Self {
            sceeg: encoder_samples(&subjects, Modality::ScEeg, window)?,
            ppg: encoder_samples(&subjects, Modality::Ppg, window)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionCounts {
    pub xattn: usize,
    pub mamba: usize,
}

/// Numeric results of one run; free of wall-clock measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub window: usize,
    pub split: SplitManifest,
    pub sceeg: EvalReport,
    pub ppg: EvalReport,
    pub alpha: AlphaSearch,
    pub score: EvalReport,
    /// Score fusion at `α = 0` and `α = 1` on the test windows.
    pub score_boundaries: (EvalReport, EvalReport),
    pub xattn: EvalReport,
    pub mamba: EvalReport,
    pub fusion_params: FusionCounts,
    /// Encoder checkpoint hashes before and after fusion training.
    pub encoder_hashes: [(String, String); 2],
    pub logs: Vec<(String, TrainLog)>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn best_unimodal_kappa(&self) -> f64 {
        self.sceeg.kappa.max(self.ppg.kappa)
    }

    pub fn fusion_reports(&self) -> [&EvalReport; 3] {
        [&self.score, &self.xattn, &self.mamba]
    }
}

/// Trained artifacts alongside the report.
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub sceeg: (Encoder, ParamStore),
    pub ppg: (Encoder, ParamStore),
    pub xattn: (FusionModel, ParamStore),
    pub mamba: (FusionModel, ParamStore),
}

fn train_encoder(
    cfg: EncoderConfig,
    train_set: &[Sample<Tensor>],
    val_set: &[Sample<Tensor>],
    tc: &TrainConfig,
    seed: u64,
) -> Result<(Encoder, ParamStore, TrainLog)> {
    let mut store = ParamStore::new();
    let mut rng = SeededRng::new(seed);
    let enc = cfg.build(&mut store, &mut rng)?;
    let log = train(&enc, &mut store, train_set, val_set, tc)?;
    Ok((enc, store, log))
}

fn score_report(
    name: &str,
    ppg: &CachedOutputs,
    sceeg: &CachedOutputs,
    targets: &[Sample<Tensor>],
    alpha: FusionWeight,
) -> Result<EvalReport> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for ((p, s), t) in ppg.probs.iter().zip(&sceeg.probs).zip(targets) {
        pred.extend(argmax_stages(&score_fusion(p, s, alpha)?)?);
        truth.extend_from_slice(&t.targets);
    }
    EvalReport::from_predictions(name, &pred, &truth)
}

fn encoder_hash(store: &ParamStore) -> String {
    crate::nn::checkpoint::content_hash(store)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let subjects = synth_generate(&cfg.synth)?;
    let cohort = preprocess_cohort(&subjects, &cfg.preprocess)?;
    drop(subjects);
    let ids: Vec<String> = cohort.iter().map(|s| s.subject_id.clone()).collect();
    let split = split_subjects(&ids, cfg.split, cfg.seed)?;
    let tr = PartitionData::new(&cohort, &split, Partition::Train, cfg.window)?;
    let va = PartitionData::new(&cohort, &split, Partition::Val, cfg.window)?;
    let te = PartitionData::new(&cohort, &split, Partition::Test, cfg.window)?;
    drop(cohort);

    let root = SeededRng::new(cfg.seed);
    let seed_of = |stream: u64| root.derive(stream).seed();
    let mut logs = Vec::new();

    let enc_cfg = |seed_stream: u64| TrainConfig {
        seed: seed_of(seed_stream),
        ..cfg.encoder_training.clone()
    };
    let (s_enc, mut s_store, log) = train_encoder(
        EncoderConfig::Sceeg(cfg.sceeg.clone()),
        &tr.sceeg,
        &va.sceeg,
        &enc_cfg(10),
        seed_of(11),
    )?;
    logs.push(("sceeg".to_string(), log.without_timing()));
    let (p_enc, mut p_store, log) = train_encoder(
        EncoderConfig::Ppg(cfg.ppg.clone()),
        &tr.ppg,
        &va.ppg,
        &enc_cfg(20),
        seed_of(21),
    )?;
    logs.push(("ppg".to_string(), log.without_timing()));

    let sceeg_report = evaluate(&s_enc, &s_store, &te.sceeg, "scEEG")?;
    let ppg_report = evaluate(&p_enc, &p_store, &te.ppg, "PPG")?;

    // Encoders are frozen from here on.
    s_store.freeze_prefixes(&["enc"]);
    p_store.freeze_prefixes(&["enc"]);
    let hashes_before = [encoder_hash(&s_store), encoder_hash(&p_store)];

    let cached = |samples_s: &[Sample<Tensor>], samples_p: &[Sample<Tensor>]| -> Result<(CachedOutputs, CachedOutputs)> {
        Ok((cache_outputs(&s_enc, &s_store, samples_s)?, cache_outputs(&p_enc, &p_store, samples_p)?))
    };
    let (tr_s, tr_p) = cached(&tr.sceeg, &tr.ppg)?;
    let (va_s, va_p) = cached(&va.sceeg, &va.ppg)?;
    let (te_s, te_p) = cached(&te.sceeg, &te.ppg)?;

    let val_targets: Vec<_> = va.sceeg.iter().flat_map(|s| s.targets.iter().copied()).collect();
    let alpha = grid_search_alpha(&va_p.probs, &va_s.probs, &val_targets)?;
    let score = score_report("Score fusion", &te_p, &te_s, &te.sceeg, alpha.alpha)?;
    let boundaries = (
        score_report("Score fusion α=0", &te_p, &te_s, &te.sceeg, FusionWeight::new(0.0)?)?,
        score_report("Score fusion α=1", &te_p, &te_s, &te.sceeg, FusionWeight::new(1.0)?)?,
    );

    let f_train = fusion_samples(&tr_s, &tr_p, &tr.sceeg)?;
    let f_val = fusion_samples(&va_s, &va_p, &va.sceeg)?;
    let f_test = fusion_samples(&te_s, &te_p, &te.sceeg)?;
    let mut fused = Vec::new();
    for (i, strategy) in [Strategy::Xattn, Strategy::Mamba].into_iter().enumerate() {
        let mut store = ParamStore::new();
        let mut rng = SeededRng::new(seed_of(30 + i as u64));
        let model = FusionModel::new(&cfg.fusion, strategy, &mut store, &mut rng)?;
        let tc = TrainConfig {
            seed: seed_of(40 + i as u64),
            ..cfg.fusion_training.clone()
        };
        let log = train(&model, &mut store, &f_train, &f_val, &tc)?;
        logs.push((strategy.name().to_string(), log.without_timing()));
        let name = match strategy {
            Strategy::Xattn => "Cross-attention fusion",
            _ => "Mamba-enhanced fusion",
        };
        let mut report = evaluate(&model, &store, &f_test, name)?;
        report.params = Some(store.count_trainable());
        fused.push((model, store, report));
    }
    let hashes_after = [encoder_hash(&s_store), encoder_hash(&p_store)];

    let (mamba_model, mamba_store, mamba_report) = fused.pop().expect("two fusion models");
    let (xattn_model, xattn_store, xattn_report) = fused.pop().expect("two fusion models");
    let mut sceeg_report = sceeg_report;
    sceeg_report.params = Some(s_store.count());
    let mut ppg_report = ppg_report;
    ppg_report.params = Some(p_store.count());

    let report = ExperimentReport {
        seed: cfg.seed,
        window: cfg.window,
        split,
        sceeg: sceeg_report,
        ppg: ppg_report,
        alpha,
        score,
        score_boundaries: boundaries,
        fusion_params: FusionCounts {
            xattn: xattn_store.count_trainable(),
            mamba: mamba_store.count_trainable(),
        },
        xattn: xattn_report,
        mamba: mamba_report,
        encoder_hashes: [
            (hashes_before[0].clone(), hashes_after[0].clone()),
            (hashes_before[1].clone(), hashes_after[1].clone()),
        ],
        logs,
    };
    Ok(ExperimentOutcome {
        report,
        sceeg: (s_enc, s_store),
        ppg: (p_enc, p_store),
        xattn: (xattn_model, xattn_store),
        mamba: (mamba_model, mamba_store),
    })
}

/// One trained model of a window-length sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: WindowLength,
    /// Residual layers of the PPG encoder.
    pub depth: Option<usize>,
    pub kappa: f64,
    pub accuracy: f64,
    pub params: usize,
    pub infer_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub modality: Modality,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:>6} {:>7} {:>7} {:>9} {:>9}\n",
            "Window", "Depth", "Kappa", "Acc", "Params", "Infer ms"
        );
        for r in &self.rows {
            let depth = r.depth.map_or("-".to_string(), |d| d.to_string());
            out += &format!(
                "{:<8} {:>6} {:>7.3} {:>7.3} {:>9} {:>9.2}\n",
                r.window.to_string(),
                depth,
                r.kappa,
                r.accuracy,
                format_params(r.params),
                r.infer_ms
            );
        }
        out
    }
}

/// Trains and tests one encoder per window length on a preprocessed cohort.
pub fn window_sweep(
    modality: Modality,
    cohort: &[SubjectEpochs],
    split: &SplitManifest,
    windows: &[usize],
    config_for: impl Fn(usize) -> EncoderConfig,
    tc: &TrainConfig,
) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(windows.len());
    for &t in windows {
        let window = WindowLength::new(t)?;
        let sets = [Partition::Train, Partition::Val, Partition::Test]
            .map(|p| partition(cohort, split, p).and_then(|s| encoder_samples(&s, modality, t)));
        let [train_set, val_set, test_set] = sets;
        let (train_set, val_set, test_set) = (train_set?, val_set?, test_set?);
        if train_set.is_empty() || val_set.is_empty() || test_set.is_empty() {
            return Err(Error::Degenerate(format!(
                "recordings are too short for {window} windows in every partition"
            )));
        }
        let cfg = config_for(t);
        if cfg.modality() != modality || cfg.window() != t {
            return Err(invalid!("sweep config for {t} epochs does not match"));
        }
        let depth = match &cfg {
            EncoderConfig::Ppg(p) => Some(p.depth),
            EncoderConfig::Sceeg(_) => None,
        };
        let (enc, store, _) = train_encoder(cfg, &train_set, &val_set, tc, tc.seed)?;
        let report = evaluate(&enc, &store, &test_set, &modality.to_string())?;
        let infer_ms = infer_ms(&enc, &store, &test_set[0].input)?;
        rows.push(SweepRow {
            window,
            depth,
            kappa: report.kappa,
            accuracy: report.accuracy,
            params: store.count(),
            infer_ms,
        });
    }
    Ok(SweepReport { modality, rows })
}
