//! End-to-end experiments: trace, split, train every configured model,
//! score the held-out windows and emit comparison artifacts.

mod artifacts;
mod config;

use std::path::Path;

pub use artifacts::{
    histogram, render_forecast_csv, render_histogram_csv, write_artifacts, ComparisonTable, Histogram,
    TableRow, HISTOGRAM_BINS,
};
pub use config::{ExperimentConfig, MetricOptions, TraceSource};

use crate::error::{Error, Result};
use crate::forecasters::{self, Forecast, ForecastDistribution, ModelConfig, ModelKind, TrainedModel};
use crate::hash::fnv1a64;
use crate::metrics::{score, EvaluationReport, REPORT_LEVELS};
use crate::series::{split_train_test, Split, SplitSpec, TimeSeries};

/// Seed of one model: master seed plus the FNV-1a hash of its name, so
/// adding a model never perturbs the others.
pub fn derive_seed(master_seed: u64, model: ModelKind) -> u64 {
    master_seed.wrapping_add(fnv1a64(model.as_str().as_bytes()))
}

/// Forecast and truth for one test window.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowForecast {
    pub forecast: Forecast,
    pub actual: TimeSeries,
}

#[derive(Clone, Debug)]
pub struct ModelRun {
    pub kind: ModelKind,
    pub seed: u64,
    pub model: TrainedModel,
    pub windows: Vec<WindowForecast>,
    pub report: EvaluationReport,
}

impl ModelRun {
    /// Pooled central forecast over all windows.
    pub fn central(&self) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for w in &self.windows {
            out.extend(w.forecast.central()?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trace: TimeSeries,
    pub train_length: usize,
    /// Ordered as the table columns.
    pub runs: Vec<ModelRun>,
    pub table: ComparisonTable,
}

impl ExperimentResult {
    pub fn run(&self, kind: ModelKind) -> Option<&ModelRun> {
        self.runs.iter().find(|r| r.kind == kind)
    }

    pub fn report(&self, kind: ModelKind) -> Option<&EvaluationReport> {
        self.run(kind).map(|r| &r.report)
    }

    /// Pooled actual values over all windows.
    pub fn actual(&self) -> Vec<f64> {
        self.runs
            .first()
            .map(|r| r.windows.iter().flat_map(|w| w.actual.values().to_vec()).collect())
            .unwrap_or_default()
    }
}

fn with_model<T>(kind: ModelKind, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Model {
        model: kind.label().to_string(),
        source: Box::new(e),
    })
}

/// Train and evaluate every configured model. Fails fast, naming the
/// first model that errors.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let trace = config.trace.load()?;
    let split = split_train_test(&trace, &config.split)?;
    let mut runs = Vec::with_capacity(config.models.len());
    for model_config in config.resolved_models() {
        let kind = model_config.kind;
        let run = with_model(
            kind,
            run_model(model_config, &split, config.split.horizon, config.metrics.season_length),
        )?;
        runs.push(run);
    }
    runs.sort_by_key(|r| r.kind);
    let table = ComparisonTable::from_reports(runs.iter().map(|r| (r.kind, &r.report)));
    Ok(ExperimentResult {
        config: config.clone(),
        train_length: split.train.len(),
        trace,
        runs,
        table,
    })
}

/// Train one model on the training part of `series` and score it on the
/// terminal windows described by `spec`, whose context and horizon
/// override the model's. Returns the run and the training length.
pub fn backtest_model(
    series: &TimeSeries,
    mut model_config: ModelConfig,
    spec: &SplitSpec,
    season_length: usize,
) -> Result<(ModelRun, usize)> {
    model_config.context_length = spec.context_length;
    model_config.horizon = spec.horizon;
    model_config.validate()?;
    let split = split_train_test(series, spec)?;
    let run = with_model(
        model_config.kind,
        run_model(model_config, &split, spec.horizon, season_length),
    )?;
    Ok((run, split.train.len()))
}

fn run_model(model_config: ModelConfig, split: &Split, horizon: usize, season_length: usize) -> Result<ModelRun> {
    let model = forecasters::train(&split.train, &model_config)?;
    let (windows, report) = evaluate_trained(&model, split, horizon, season_length)?;
    Ok(ModelRun {
        kind: model_config.kind,
        seed: model_config.seed,
        model,
        windows,
        report,
    })
}

/// Forecast every window of `split` with an already trained model and
/// score the pool. Window `k` samples with seed `model seed + k`.
pub fn evaluate_trained(
    model: &TrainedModel,
    split: &Split,
    horizon: usize,
    season_length: usize,
) -> Result<(Vec<WindowForecast>, EvaluationReport)> {
    let kind = model.kind();
    let seed = model.config().seed;
    let mut windows = Vec::with_capacity(split.windows.len());
    for (k, w) in split.windows.iter().enumerate() {
        let forecast = model.forecast(&w.context, horizon, seed.wrapping_add(k as u64))?;
        // The seasonal-naive point is scored at every level as a degenerate
        // distribution; the LSTM baseline stays point-only.
        let forecast = match (kind, forecast) {
            (ModelKind::SeasonalNaive, Forecast::Point(p)) => {
                Forecast::Distribution(ForecastDistribution::degenerate(&p)?)
            }
            (_, f) => f,
        };
        windows.push(WindowForecast {
            forecast,
            actual: w.actual.clone(),
        });
    }
    let report = evaluate_windows(kind, &windows, split.train.values(), season_length)?;
    Ok((windows, report))
}

/// Score pooled windows of one model.
pub fn evaluate_windows(
    kind: ModelKind,
    windows: &[WindowForecast],
    train: &[f64],
    season_length: usize,
) -> Result<EvaluationReport> {
    let mut central = Vec::new();
    let mut actual = Vec::new();
    let mut quantiles: Option<Vec<Vec<f64>>> = None;
    for w in windows {
        central.extend(w.forecast.central()?);
        actual.extend_from_slice(w.actual.values());
        if let Forecast::Distribution(d) = &w.forecast {
            let q = d.quantiles(&REPORT_LEVELS)?;
            let acc = quantiles.get_or_insert_with(|| vec![Vec::new(); REPORT_LEVELS.len()]);
            for (a, v) in acc.iter_mut().zip(q) {
                a.extend(v);
            }
        }
    }
    score(kind.label(), &central, quantiles.as_deref(), &actual, train, season_length)
}

/// Run the experiment and write its artifacts to `dir`. On failure a
/// manifest marked incomplete is left behind.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentResult> {
    match run_experiment(config) {
        Ok(result) => {
            write_artifacts(&result, dir)?;
            Ok(result)
        }
        Err(e) => {
            artifacts::write_incomplete_manifest(config, dir, &e)?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests;
