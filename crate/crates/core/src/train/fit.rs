//! Minibatch training with focal loss and best-on-validation selection.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::data::Stage;
use crate::encoder::Encoder;
use crate::error::{invalid, Error, Result};
use crate::fusion::{FusionInput, FusionModel};
use crate::metrics::{argmax_stages, confusion, EvalReport};
use crate::nn::{Gradients, ParamStore, SeededRng, Tape, Tensor, Var};

/// Anything that maps one input to per-epoch class probabilities `[T×4]`.
pub trait SequenceModel: Sync {
    type Input: Sync;

    fn probs(&self, g: &mut Tape<'_>, input: &Self::Input) -> Result<Var>;
}

impl SequenceModel for Encoder {
    type Input = Tensor;

    fn probs(&self, g: &mut Tape<'_>, input: &Tensor) -> Result<Var> {
        Ok(self.forward(g, input)?.probs)
    }
}

impl SequenceModel for FusionModel {
    type Input = FusionInput;

    fn probs(&self, g: &mut Tape<'_>, input: &FusionInput) -> Result<Var> {
        self.forward_input(g, input)
    }
}

/// One window with its per-epoch reference stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<I> {
    pub input: I,
    pub targets: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub focal_gamma: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Parameter-name prefixes that receive no updates.
    pub freeze: Vec<String>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 50,
            batch_size: 16,
            focal_gamma: 2.0,
            patience: None,
            seed: 0,
            freeze: Vec::new(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced-rate adaptation with early stopping.
    pub fn fine_tune() -> Self {
        Self {
            learning_rate: 1e-5,
            patience: Some(5),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning rate {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        if self.patience == Some(0) {
            return Err(invalid!("patience must be at least 1"));
        }
        if self.focal_gamma < 0.0 {
            return Err(invalid!("focal gamma {}", self.focal_gamma));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// `None` for the evaluation of the starting point.
    pub train_loss: Option<f64>,
    pub val_kappa: f64,
    pub val_accuracy: f64,
    pub wall_ms: f64,
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().rev().find(|e| e.best)
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainLog {
        let mut log = self.clone();
        log.epochs.iter_mut().for_each(|e| e.wall_ms = 0.0);
        log
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
            .collect()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

fn targets_of(targets: &[Stage]) -> Vec<usize> {
    targets.iter().map(|s| s.index()).collect()
}

/// Loss and gradients of one window.
fn window_gradients<M: SequenceModel>(
    model: &M,
    store: &ParamStore,
    sample: &Sample<M::Input>,
    gamma: f64,
    dropout: SeededRng,
) -> Result<(f64, Gradients)> {
    let mut g = Tape::new(store).with_dropout(dropout);
    let p = model.probs(&mut g, &sample.input)?;
    let loss = g.focal_loss(p, &targets_of(&sample.targets), gamma)?;
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?))
}

/// Probabilities for every sample, in order.
pub fn predict<M: SequenceModel>(model: &M, store: &ParamStore, samples: &[Sample<M::Input>]) -> Result<Vec<Tensor>> {
    samples
        .par_iter()
        .map(|s| {
            let mut g = Tape::new(store);
            let p = model.probs(&mut g, &s.input)?;
            Ok(g.value(p).clone())
        })
        .collect()
}

/// Flattened predicted and reference stages over all samples.
pub fn stage_pairs<I>(probs: &[Tensor], samples: &[Sample<I>]) -> Result<(Vec<Stage>, Vec<Stage>)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (p, s) in probs.iter().zip(samples) {
        pred.extend(argmax_stages(p)?);
        truth.extend_from_slice(&s.targets);
    }
    Ok((pred, truth))
}

pub fn evaluate<M: SequenceModel>(
    model: &M,
    store: &ParamStore,
    samples: &[Sample<M::Input>],
    name: &str,
) -> Result<EvalReport> {
    let probs = predict(model, store, samples)?;
    let (pred, truth) = stage_pairs(&probs, samples)?;
    EvalReport::from_predictions(name, &pred, &truth)
}

fn validation_scores<M: SequenceModel>(model: &M, store: &ParamStore, val: &[Sample<M::Input>]) -> Result<(f64, f64)> {
    let probs = predict(model, store, val)?;
    let (pred, truth) = stage_pairs(&probs, val)?;
    let report = EvalReport::from_confusion("val", confusion(&pred, &truth)?)?;
    Ok((report.kappa, report.accuracy))
}

/// Trains the unfrozen parameters of `store` and leaves it holding the state
/// with the highest validation κ, the starting point included.
pub fn train<M: SequenceModel>(
    model: &M,
    store: &mut ParamStore,
    train: &[Sample<M::Input>],
    val: &[Sample<M::Input>],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Degenerate("training and validation sets must be non-empty".into()));
    }
    store.freeze_prefixes(&cfg.freeze);
    let root = SeededRng::new(cfg.seed);
    let mut opt = Adam::new(cfg.adam, cfg.learning_rate);
    let mut log = TrainLog::default();

    let start = Instant::now();
    let (k0, a0) = validation_scores(model, store, val)?;
    log.epochs.push(EpochLog {
        epoch: 0,
        train_loss: None,
        val_kappa: k0,
        val_accuracy: a0,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        best: true,
    });
    let mut best = (k0, store.clone());
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let stream = root.derive(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        stream.derive(0).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| {
                    let dropout = stream.derive(i as u64 + 1);
                    window_gradients(model, store, &train[i], cfg.focal_gamma, dropout)
                })
                .collect::<Result<_>>()?;
            let mut total: Option<Gradients> = None;
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
                }
                loss_sum += loss;
                total = Some(match total {
                    None => grads,
                    Some(t) => t.merge(&grads),
                });
            }
            let grads = total.expect("batch is non-empty").scaled(1.0 / batch.len() as f64);
            opt.step(store, &grads);
        }
        let (kappa, accuracy) = validation_scores(model, store, val)?;
        let improved = kappa > best.0;
        if improved {
            best = (kappa, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: Some(loss_sum / train.len() as f64),
            val_kappa: kappa,
            val_accuracy: accuracy,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            best: improved,
        });
        if cfg.patience.is_some_and(|p| since_best >= p) {
            log.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    *store = best.1;
    Ok(log)
}

/// Continues training a loaded model on target-domain data at the
/// fine-tuning rate, keeping the best target-validation state.
pub fn fine_tune<M: SequenceModel>(
    model: &M,
    store: &mut ParamStore,
    target_train: &[Sample<M::Input>],
    target_val: &[Sample<M::Input>],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if cfg.patience.is_none() {
        return Err(invalid!("fine-tuning requires an early-stopping patience"));
    }
    train(model, store, target_train, target_val, cfg)
}

/// Median wall time in milliseconds of `runs` calls after `warmup` calls.
pub fn median_ms(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = (0..runs.max(1))
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<Vec<_>>>()?;
    times.sort_by(f64::total_cmp);
    let n = times.len();
    Ok(if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    })
}

/// Single-window inference latency: median of 100 passes after 10 warmups.
pub fn infer_ms<M: SequenceModel>(model: &M, store: &ParamStore, input: &M::Input) -> Result<f64> {
    median_ms(10, 100, || {
        let mut g = Tape::new(store);
        model.probs(&mut g, input).map(|_| ())
    })
}
