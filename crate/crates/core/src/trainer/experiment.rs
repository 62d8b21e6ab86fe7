//! Multi-seed runs: the full model, its ablations and the text-only baseline.

use serde::{Deserialize, Serialize};

use super::{evaluate_part, train, Dataset, EpochRecord, MetricsReport, TrainConfig, TrainError};
use crate::data::Part;
use crate::model::{Ablation, AnyModel, ModelConfig, ModelKind, SentimentModel, TextOnlyModel, VcCsa};

/// Everything recorded about one trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub kind: ModelKind,
    pub ablation: Ablation,
    pub param_count: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub dev: MetricsReport,
    pub test: MetricsReport,
}

/// Trains one model of `kind` from `seed` and evaluates it on dev and test.
/// `base` is completed from the data (frame width, vocabulary size).
pub fn run_once(
    data: &Dataset,
    base: &ModelConfig,
    train_config: &TrainConfig,
    kind: ModelKind,
    seed: u64,
) -> Result<(AnyModel, RunResult), TrainError> {
    let config = data.configure(base)?;
    let mut model = match kind {
        ModelKind::VcCsa => AnyModel::VcCsa(VcCsa::new(config, seed)?),
        ModelKind::TextOnly => AnyModel::TextOnly(TextOnlyModel::new(config, seed)?),
    };
    let outcome = train(&mut model, data, train_config, seed)?;
    let dev = evaluate_part(&model, data, Part::Dev, train_config)?.report;
    let test = evaluate_part(&model, data, Part::Test, train_config)?.report;
    let result = RunResult {
        seed,
        kind,
        ablation: model.config().ablation,
        param_count: model.params().scalar_count(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        dev,
        test,
    };
    Ok((model, result))
}

/// Per-seed runs with the mean and sample standard deviation of every metric
/// (standard deviation is 0 for a single seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<RunResult>,
    pub mean: MetricsReport,
    pub stdev: MetricsReport,
}

/// Field-wise arithmetic mean and sample standard deviation.
pub fn summarize(reports: &[MetricsReport]) -> (MetricsReport, MetricsReport) {
    assert!(!reports.is_empty(), "summarize needs at least one report");
    let values: Vec<Vec<f64>> = reports.iter().map(MetricsReport::values).collect();
    let n = values.len() as f64;
    let width = values[0].len();
    let mean: Vec<f64> = (0..width).map(|j| values.iter().map(|v| v[j]).sum::<f64>() / n).collect();
    let stdev: Vec<f64> = (0..width)
        .map(|j| {
            if values.len() < 2 {
                0.0
            } else {
                (values.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        })
        .collect();
    let mut mean_report = reports[0].with_values(&mean);
    let mut stdev_report = reports[0].with_values(&stdev);
    mean_report.n = reports[0].n;
    stdev_report.n = reports[0].n;
    (mean_report, stdev_report)
}

/// Runs `run` once per seed and summarises the test reports.
pub fn seed_sweep<F>(seeds: &[u64], mut run: F) -> Result<SweepSummary, TrainError>
where
    F: FnMut(u64) -> Result<RunResult, TrainError>,
{
    if seeds.is_empty() {
        return Err(TrainError::InvalidConfig("seed list must not be empty".into()));
    }
    let runs = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>, _>>()?;
    let tests: Vec<MetricsReport> = runs.iter().map(|r| r.test.clone()).collect();
    let (mean, stdev) = summarize(&tests);
    Ok(SweepSummary { runs, mean, stdev })
}

/// The full pipeline with one module substitution, over `train_config.seeds`.
pub fn ablate(
    data: &Dataset,
    base: &ModelConfig,
    train_config: &TrainConfig,
    mode: Ablation,
) -> Result<SweepSummary, TrainError> {
    if !Ablation::MODES.contains(&mode) {
        return Err(TrainError::UnknownMode(mode.key().to_string()));
    }
    let config = base.clone().with_ablation(mode);
    seed_sweep(&train_config.seeds, |seed| {
        run_once(data, &config, train_config, ModelKind::VcCsa, seed).map(|(_, r)| r)
    })
}

/// The text-only classifier over `train_config.seeds`.
pub fn text_only_baseline(
    data: &Dataset,
    base: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<SweepSummary, TrainError> {
    seed_sweep(&train_config.seeds, |seed| {
        run_once(data, base, train_config, ModelKind::TextOnly, seed).map(|(_, r)| r)
    })
}
