use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ExperimentConfig, ExperimentResult, ModelRun};
use crate::error::{Error, Result};
use crate::forecasters::{Forecast, ModelKind, Representation};
use crate::hash::fingerprint;
use crate::metrics::EvaluationReport;

/// Bin count of the forecast histogram.
pub const HISTOGRAM_BINS: usize = 30;

const FOOTNOTE: &str = "MASE: MAE over the in-sample seasonal-naive MAE. \
QL: pinball loss summed over all test points. \
Coverage: share of actual values strictly below the quantile. \
'*' marks the best model per row ('-' = not reported).";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    /// Quantile level for QL and coverage rows.
    pub level: Option<f64>,
    pub values: Vec<Option<f64>>,
    /// Column label of the best value.
    pub best: Option<String>,
}

/// Metrics as rows, models as columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    pub reports: Vec<EvaluationReport>,
    pub footnote: String,
}

fn argmin(values: &[Option<f64>], key: impl Fn(f64) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = v {
            let k = key(*v);
            if best.is_none_or(|(_, b)| k < b) {
                best = Some((i, k));
            }
        }
    }
    best.map(|(i, _)| i)
}

impl ComparisonTable {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = (ModelKind, &'a EvaluationReport)>) -> Self {
        let reports: Vec<(ModelKind, &EvaluationReport)> = reports.into_iter().collect();
        let columns: Vec<String> = reports.iter().map(|(k, _)| k.label().to_string()).collect();
        let mut rows = Vec::new();
        let mut push = |metric: String, level: Option<f64>, values: Vec<Option<f64>>, key: &dyn Fn(f64) -> f64| {
            let best = argmin(&values, key).map(|i| columns[i].clone());
            rows.push(TableRow {
                metric,
                level,
                values,
                best,
            });
        };
        let col = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| reports.iter().map(|(_, r)| f(r)).collect();
        let id = |v: f64| v;
        push("MSE".into(), None, col(&|r| Some(r.mse)), &id);
        push("MASE".into(), None, col(&|r| r.mase_scaled), &id);
        push("MAPE".into(), None, col(&|r| Some(r.mape)), &id);
        push("ND".into(), None, col(&|r| r.nd), &id);
        for q in [0.1, 0.5, 0.9] {
            push(format!("QL[{q}]"), Some(q), col(&|r| r.level(q).map(|s| s.quantile_loss)), &id);
            push(
                format!("Coverage[{q}]"),
                Some(q),
                col(&|r| r.level(q).map(|s| s.coverage)),
                &move |c: f64| (c - q).abs(),
            );
        }
        Self {
            columns,
            rows,
            reports: reports.iter().map(|(_, r)| (*r).clone()).collect(),
            footnote: FOOTNOTE.into(),
        }
    }

    pub fn row(&self, metric: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Value of `metric` (e.g. `"MSE"`, `"QL[0.5]"`) for `kind`.
    pub fn get(&self, metric: &str, kind: ModelKind) -> Option<f64> {
        let col = self.columns.iter().position(|c| c == kind.label())?;
        self.row(metric)?.values[col]
    }

    pub fn best(&self, metric: &str) -> Option<&str> {
        self.row(metric)?.best.as_deref()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Aligned plain-text rendering.
    pub fn render_text(&self) -> String {
        let mut cells: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Metric".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("Best".into());
        cells.push(header);
        for row in &self.rows {
            let mut line = vec![row.metric.clone()];
            for (v, c) in row.values.iter().zip(&self.columns) {
                line.push(match v {
                    None => "-".into(),
                    Some(v) if row.best.as_deref() == Some(c.as_str()) => format!("{v:.4}*"),
                    Some(v) => format!("{v:.4}"),
                });
            }
            line.push(row.best.clone().unwrap_or_else(|| "-".into()));
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|j| cells.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in &cells {
            let mut line = String::new();
            for (j, cell) in r.iter().enumerate() {
                if j == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[j]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[j]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.footnote);
        out.push('\n');
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-step forecast CSV of one model:
/// `window,step,timestamp,actual,median,q0.1,q0.9[,baseline_<kind>...]`.
///
/// `median` holds the point value for point forecasts, whose quantile
/// cells are empty. Baselines are pooled central values aligned with the
/// model's windows.
pub fn render_forecast_csv(run: &ModelRun, baselines: &[(ModelKind, Vec<f64>)]) -> Result<String> {
    let mut out = String::from("window,step,timestamp,actual,median,q0.1,q0.9");
    for (k, _) in baselines {
        let _ = write!(out, ",baseline_{k}");
    }
    out.push('\n');
    let mut pooled = 0;
    for (w, win) in run.windows.iter().enumerate() {
        let central = win.forecast.central()?;
        let bands = match &win.forecast {
            Forecast::Point(_) => None,
            Forecast::Distribution(d) => Some(d.quantiles(&[0.1, 0.9])?),
        };
        for (step, (&actual, &mid)) in win.actual.values().iter().zip(&central).enumerate() {
            let _ = write!(
                out,
                "{w},{step},{},{actual},{mid},{},{}",
                win.actual.timestamp(step).to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                fmt_opt(bands.as_ref().map(|b| b[0][step])),
                fmt_opt(bands.as_ref().map(|b| b[1][step])),
            );
            for (kind, values) in baselines {
                let v = values
                    .get(pooled)
                    .ok_or_else(|| Error::sizing(format!("baseline {kind}"), pooled + 1, values.len()))?;
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
            pooled += 1;
        }
    }
    Ok(out)
}

/// Binned sample values of several models at one forecast step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `HISTOGRAM_BINS + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<(String, Vec<usize>)>,
    /// Vertical-line markers: the true value and point baselines.
    pub markers: Vec<(String, f64)>,
}

/// Bin `samples` per model into [`HISTOGRAM_BINS`] equal bins spanning the
/// pooled samples and markers. If every value is identical the range is
/// widened to one unit centred on it.
pub fn histogram(samples: &[(String, Vec<f64>)], markers: &[(String, f64)]) -> Result<Histogram> {
    let pooled = samples
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .chain(markers.iter().map(|(_, v)| *v));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in pooled {
        if !v.is_finite() {
            return Err(Error::Validation("histogram values must be finite".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return Err(Error::Validation("histogram needs at least one value".into()));
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut edges: Vec<f64> = (0..HISTOGRAM_BINS).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    let counts = samples
        .iter()
        .map(|(name, values)| {
            let mut c = vec![0usize; HISTOGRAM_BINS];
            for v in values {
                let bin = (((v - lo) / width).floor() as usize).min(HISTOGRAM_BINS - 1);
                c[bin] += 1;
            }
            (name.clone(), c)
        })
        .collect();
    Ok(Histogram {
        edges,
        counts,
        markers: markers.to_vec(),
    })
}

/// Samples of every probabilistic model and the markers at the configured
/// window and step.
pub(crate) fn experiment_histogram(result: &ExperimentResult) -> Result<Histogram> {
    let opts = &result.config.metrics;
    let (w, step) = (opts.histogram_window, opts.histogram_step);
    let mut samples = Vec::new();
    let mut markers = Vec::new();
    let first = result
        .runs
        .first()
        .ok_or_else(|| Error::Validation("experiment has no models".into()))?;
    let window = first
        .windows
        .get(w)
        .ok_or_else(|| Error::sizing("histogram window", w + 1, first.windows.len()))?;
    if step >= window.actual.len() {
        return Err(Error::sizing("histogram step", step + 1, window.actual.len()));
    }
    markers.push(("true".to_string(), window.actual.values()[step]));
    for run in &result.runs {
        let f = &run.windows[w].forecast;
        match f {
            Forecast::Distribution(d) if !matches!(d.representation(), Representation::Degenerate(_)) => {
                let paths = d.sample_paths(run.model.config().num_sample_paths, run.seed.wrapping_add(w as u64));
                samples.push((run.kind.as_str().to_string(), paths.iter().map(|p| p[step]).collect()));
            }
            _ => markers.push((run.kind.as_str().to_string(), f.central()?[step])),
        }
    }
    histogram(&samples, &markers)
}

/// `bin_left,bin_right,count_<model>...,marker_<name>...`; marker columns
/// repeat the marker value on every row.
pub fn render_histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left,bin_right");
    for (name, _) in &h.counts {
        let _ = write!(out, ",count_{name}");
    }
    for (name, _) in &h.markers {
        let _ = write!(out, ",marker_{name}");
    }
    out.push('\n');
    for i in 0..h.edges.len() - 1 {
        let _ = write!(out, "{},{}", h.edges[i], h.edges[i + 1]);
        for (_, c) in &h.counts {
            let _ = write!(out, ",{}", c[i]);
        }
        for (_, v) in &h.markers {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn config_hash(config: &ExperimentConfig) -> String {
    fingerprint(serde_json::to_string(config).expect("config serializes").as_bytes())
}

/// Write `table.json`, `table.txt`, `forecast_<model>.csv`, `histogram.csv`
/// and `manifest.json` into `dir`.
pub fn write_artifacts(result: &ExperimentResult, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, "table.json", &result.table.to_json())?;
    written.push("table.json".to_string());
    write(dir, "table.txt", &result.table.render_text())?;
    written.push("table.txt".to_string());

    let baselines: Vec<(ModelKind, Vec<f64>)> = result
        .runs
        .iter()
        .filter(|r| !r.kind.is_probabilistic())
        .map(|r| Ok((r.kind, r.central()?)))
        .collect::<Result<_>>()?;
    for run in &result.runs {
        let others: Vec<_> = baselines.iter().filter(|(k, _)| *k != run.kind).cloned().collect();
        let name = format!("forecast_{}.csv", run.kind);
        write(dir, &name, &render_forecast_csv(run, &others)?)?;
        written.push(name);
    }
    write(dir, "histogram.csv", &render_histogram_csv(&experiment_histogram(result)?))?;
    written.push("histogram.csv".to_string());

    let models: Vec<_> = result
        .runs
        .iter()
        .map(|r| {
            json!({
                "kind": r.kind,
                "seed": r.seed,
                "fingerprint": r.model.fingerprint(),
                "final_loss": r.model.summary().final_loss,
            })
        })
        .collect();
    let manifest = json!({
        "status": "complete",
        "config_hash": config_hash(&result.config),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "master_seed": result.config.master_seed,
        "trace": {
            "series_id": result.trace.series_id(),
            "length": result.trace.len(),
            "train_length": result.train_length,
        },
        "models": models,
        "artifacts": written,
        "config": result.config,
    });
    write(dir, "manifest.json", &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    written.push("manifest.json".to_string());
    Ok(written)
}

pub(crate) fn write_incomplete_manifest(config: &ExperimentConfig, dir: &Path, error: &Error) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let failed = match error {
        Error::Model { model, .. } => Some(model.clone()),
        _ => None,
    };
    let manifest = json!({
        "status": "incomplete",
        "config_hash": config_hash(config),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "failed_model": failed,
        "error": error.to_string(),
    });
    write(dir, "manifest.json", &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}
