//! Optimisation loop, evaluation, seed sweeps and ablation runs.

mod experiment;
mod metrics;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{ablate, run_once, seed_sweep, summarize, text_only_baseline, RunResult, SweepSummary};
pub use metrics::{format_table, metrics, ClassMetrics, MetricsReport, TableRow, TaskMetrics};

use crate::data::{
    make_batches, BatchOptions, Corpus, DataError, PaddedBatch, Part, SplitAssignment, TextSource,
};
use crate::encoders::{build_vocabulary, EncoderError, ExternalTextFeatures, Vocabulary};
use crate::model::{argmax_rows, save_checkpoint, total_loss, ModelConfig, ModelError, SentimentModel, TextEncoder};
use crate::tape::{GradStore, Matrix, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("non-finite loss at epoch {epoch}, step {step} (loss {loss}); {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
        detail: String,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("unknown ablation mode {0:?}")]
    UnknownMode(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Rescale the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
    pub seeds: Vec<u64>,
    /// Frame cap per video.
    pub v_cap: usize,
    /// Token cap per comment.
    pub t_cap: usize,
    /// Where the best-dev parameters are written, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            clip_norm: Some(5.0),
            patience: None,
            seeds: vec![0, 1, 2, 3, 4],
            v_cap: 200,
            t_cap: 64,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.seeds.is_empty() {
            return bad("seed list must not be empty");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.v_cap == 0 || self.t_cap == 0 {
            return bad("v_cap and t_cap must be >= 1");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    fn batch_options(&self, shuffle_seed: Option<u64>) -> BatchOptions {
        BatchOptions {
            batch_size: self.batch_size,
            v_cap: self.v_cap,
            t_cap: self.t_cap,
            shuffle_seed,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|(_, _, p)| Matrix::zeros(p.dim())).collect();
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &GradStore) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.epsilon, self.lr, self.weight_decay);
        for (id, g) in grads.iter() {
            let i = id.index();
            let p = params.get_mut(id);
            ndarray::Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

fn grad_norm(grads: &GradStore) -> f64 {
    grads
        .iter()
        .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Text representation used to build batches.
#[derive(Debug, Clone)]
pub enum TextData {
    Tokens(Vocabulary),
    External(ExternalTextFeatures),
}

/// A corpus with its split and text representation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub split: SplitAssignment,
    pub text: TextData,
}

impl Dataset {
    /// Builds the vocabulary from the training part only.
    pub fn with_vocabulary(corpus: Corpus, split: SplitAssignment) -> Result<Self, TrainError> {
        split.check_against(&corpus.index)?;
        let train_ids: std::collections::HashSet<&str> = split.members(Part::Train).into_iter().collect();
        let vocab = build_vocabulary(
            corpus
                .comments()
                .iter()
                .filter(|c| train_ids.contains(c.comment_id.as_str()))
                .map(|c| c.text.as_str()),
        )?;
        Ok(Self {
            corpus,
            split,
            text: TextData::Tokens(vocab),
        })
    }

    pub fn with_external_text(
        corpus: Corpus,
        split: SplitAssignment,
        features: ExternalTextFeatures,
    ) -> Result<Self, TrainError> {
        split.check_against(&corpus.index)?;
        Ok(Self {
            corpus,
            split,
            text: TextData::External(features),
        })
    }

    pub fn text_source(&self) -> TextSource<'_> {
        match &self.text {
            TextData::Tokens(v) => TextSource::Tokens(v),
            TextData::External(e) => TextSource::External(e),
        }
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        match &self.text {
            TextData::Tokens(v) => Some(v),
            TextData::External(_) => None,
        }
    }

    /// `base` with the data-dependent sizes (frame width, text source) filled in.
    pub fn configure(&self, base: &ModelConfig) -> Result<ModelConfig, TrainError> {
        let mut config = base.clone();
        config.d_raw = self.corpus.feature_dim();
        config.text = match &self.text {
            TextData::Tokens(v) => TextEncoder::Embedding { vocab_size: v.len() },
            TextData::External(e) => {
                let d = e.dim()?;
                if d != config.d_text {
                    return Err(TrainError::ConfigMismatch(format!(
                        "text features are {d}-wide but d_text is {}",
                        config.d_text
                    )));
                }
                TextEncoder::External
            }
        };
        Ok(config)
    }

    /// Fails when a model built for `config` cannot consume this data.
    pub fn check_config(&self, config: &ModelConfig) -> Result<(), TrainError> {
        let expected = self.configure(config)?;
        if expected.d_raw != config.d_raw {
            return Err(TrainError::ConfigMismatch(format!(
                "model expects {}-wide frames, corpus has {}",
                config.d_raw, expected.d_raw
            )));
        }
        if expected.text != config.text {
            return Err(TrainError::ConfigMismatch(format!(
                "model text encoder {:?} does not match the data ({:?})",
                config.text, expected.text
            )));
        }
        Ok(())
    }

    pub fn batches(&self, part: Part, config: &TrainConfig, shuffle_seed: Option<u64>) -> Result<Vec<PaddedBatch>, TrainError> {
        let (batches, _) = make_batches(
            &self.split,
            part,
            &self.corpus,
            self.text_source(),
            &config.batch_options(shuffle_seed),
        )?;
        Ok(batches)
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_opinion_micro_f1: f64,
    pub dev_opinion_macro_f1: f64,
    pub dev_emotion_micro_f1: f64,
    pub dev_emotion_macro_f1: f64,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    let io = |e| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    for r in history {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
    }
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let text = fs::read_to_string(path).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                TrainError::Data(DataError::Json {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
        })
        .collect()
}

/// Predictions and metrics on a list of batches.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub loss: f64,
    pub comment_ids: Vec<String>,
    pub opinion_pred: Vec<usize>,
    pub emotion_pred: Vec<usize>,
}

pub fn evaluate(model: &dyn SentimentModel, batches: &[PaddedBatch]) -> Result<Evaluation, TrainError> {
    let mut comment_ids = Vec::new();
    let (mut op, mut og, mut ep, mut eg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut loss_sum = 0.0;
    for batch in batches {
        let (o, e) = model.predict(batch)?;
        loss_sum += total_loss(&o, &e, &batch.opinion_labels, &batch.emotion_labels)? * batch.len() as f64;
        op.extend(argmax_rows(&o));
        ep.extend(argmax_rows(&e));
        og.extend_from_slice(&batch.opinion_labels);
        eg.extend_from_slice(&batch.emotion_labels);
        comment_ids.extend(batch.comment_ids.iter().cloned());
    }
    let report = MetricsReport::from_predictions(&op, &og, &ep, &eg)?;
    Ok(Evaluation {
        loss: if og.is_empty() { 0.0 } else { loss_sum / og.len() as f64 },
        report,
        comment_ids,
        opinion_pred: op,
        emotion_pred: ep,
    })
}

/// Evaluates `model` on one split part after checking it fits the data.
pub fn evaluate_part(
    model: &dyn SentimentModel,
    data: &Dataset,
    part: Part,
    config: &TrainConfig,
) -> Result<Evaluation, TrainError> {
    data.check_config(model.config())?;
    evaluate(model, &data.batches(part, config, None)?)
}

/// Result of one training run. The model passed to [`train`] holds the
/// best-dev parameters when it returns.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were retained.
    pub best_epoch: usize,
    pub best_dev_opinion_micro_f1: f64,
}

fn non_finite_detail(params: &ParamStore, grads: &GradStore) -> String {
    let bad_params: Vec<&str> = params
        .iter()
        .filter(|(_, _, p)| p.iter().any(|v| !v.is_finite()))
        .map(|(_, n, _)| n)
        .collect();
    let bad_grads: Vec<&str> = grads
        .iter()
        .filter(|(_, g)| g.iter().any(|v| !v.is_finite()))
        .map(|(id, _)| params.name(id))
        .collect();
    format!(
        "non-finite parameters: [{}]; non-finite gradients: [{}]",
        bad_params.join(", "),
        bad_grads.join(", ")
    )
}

/// Seed used to shuffle the training part in a given epoch.
pub fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64 + 1)
}

/// Mini-batch Adam on the training part with per-epoch dev evaluation.
/// The parameters with the best dev opinion micro-F1 (earliest on ties) are
/// restored into `model` and, if configured, written as a checkpoint.
pub fn train(
    model: &mut dyn SentimentModel,
    data: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(model, data, config, seed, &mut |_| {})
}

pub fn train_with_progress(
    model: &mut dyn SentimentModel,
    data: &Dataset,
    config: &TrainConfig,
    seed: u64,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    data.check_config(model.config())?;
    let dev = data.batches(Part::Dev, config, None)?;
    let mut optimizer = Adam::new(model.params(), config);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        let batches = data.batches(Part::Train, config, Some(epoch_shuffle_seed(seed, epoch)))?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            let (loss, mut grads) = model.loss_and_grad(batch)?;
            let norm = grad_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    loss,
                    detail: non_finite_detail(model.params(), &grads),
                });
            }
            if let Some(clip) = config.clip_norm {
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            optimizer.update(model.params_mut(), &grads);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let eval = evaluate(&*model, &dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            dev_loss: eval.loss,
            dev_opinion_micro_f1: eval.report.opinion.micro_f1,
            dev_opinion_macro_f1: eval.report.opinion.macro_f1,
            dev_emotion_micro_f1: eval.report.emotion.micro_f1,
            dev_emotion_macro_f1: eval.report.emotion.macro_f1,
        };
        progress(&record);
        let score = record.dev_opinion_micro_f1;
        history.push(record);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, model.params().clone()));
        }
        if let (Some(patience), Some((best_epoch, _, _))) = (config.patience, &best) {
            if epoch - best_epoch >= patience {
                break;
            }
        }
    }
    let (best_epoch, best_score, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    if let Some(path) = &config.checkpoint {
        save_checkpoint(path, &*model)?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_dev_opinion_micro_f1: best_score,
    })
}
