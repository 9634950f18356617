//! Univariate PRB-utilization traces: data model, splitting and scaling.

mod generator;
mod io;

pub use generator::{generate_prb_trace, TraceGenConfig, BURST_DURATION_STEPS};
pub use io::{load_trace, parse_trace, render_trace, save_trace};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_WEEK: i64 = 7 * SECONDS_PER_DAY;
/// Total PRBs of a 100 MHz NR carrier at 30 kHz subcarrier spacing.
pub const DEFAULT_CAPACITY: f64 = 273.0;
pub const DEFAULT_STEP_SECONDS: i64 = 900;

/// Number of calendar covariates produced by [`time_features`].
pub const NUM_TIME_FEATURES: usize = 4;

/// A regularly sampled PRB-utilization trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    series_id: String,
    start: DateTime<Utc>,
    step_seconds: i64,
    values: Vec<f64>,
    capacity: f64,
}

impl TimeSeries {
    pub fn new(
        series_id: impl Into<String>,
        start: DateTime<Utc>,
        step_seconds: i64,
        values: Vec<f64>,
        capacity: f64,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("time series must not be empty".into()));
        }
        if step_seconds <= 0 {
            return Err(Error::Validation(format!(
                "step must be positive, got {step_seconds} s"
            )));
        }
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::Validation(format!(
                "capacity must be positive, got {capacity}"
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0 && **v <= capacity))
        {
            return Err(Error::Validation(format!(
                "value {v} at index {i} outside [0, {capacity}]"
            )));
        }
        Ok(Self {
            series_id: series_id.into(),
            start,
            step_seconds,
            values,
            capacity,
        })
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step_seconds(&self) -> i64 {
        self.step_seconds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_seconds * index as i64)
    }

    /// Timestamp of the sample right after the last one.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.len())
    }

    /// Sub-series over `range`, keeping metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::sizing(
                format!("slice {}..{}", range.start, range.end),
                range.end.max(range.start + 1),
                self.len(),
            ));
        }
        Ok(Self {
            series_id: self.series_id.clone(),
            start: self.timestamp(range.start),
            step_seconds: self.step_seconds,
            values: self.values[range].to_vec(),
            capacity: self.capacity,
        })
    }

    /// The last `n` samples.
    pub fn tail(&self, n: usize) -> Result<Self> {
        if n > self.len() || n == 0 {
            return Err(Error::sizing("tail", n.max(1), self.len()));
        }
        self.slice(self.len() - n..self.len())
    }

    /// Calendar covariates of sample `index`.
    pub fn time_features(&self, index: usize) -> [f64; NUM_TIME_FEATURES] {
        time_features(self.timestamp(index))
    }
}

/// `[sin, cos]` of the position in the day followed by `[sin, cos]` of the
/// position in the (Monday-based) week.
pub fn time_features(ts: DateTime<Utc>) -> [f64; NUM_TIME_FEATURES] {
    use std::f64::consts::TAU;
    let secs = ts.timestamp();
    let day = secs.rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64;
    // 1970-01-01 was a Thursday.
    let week =
        (secs + 3 * SECONDS_PER_DAY).rem_euclid(SECONDS_PER_WEEK) as f64 / SECONDS_PER_WEEK as f64;
    [
        (TAU * day).sin(),
        (TAU * day).cos(),
        (TAU * week).sin(),
        (TAU * week).cos(),
    ]
}

/// Context/horizon/window sizing of a backtest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub context_length: usize,
    pub horizon: usize,
    pub test_windows: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("context_length", self.context_length),
            ("horizon", self.horizon),
            ("test_windows", self.test_windows),
        ] {
            if v == 0 {
                return Err(Error::config(format!("split.{field}"), "must be positive"));
            }
        }
        Ok(())
    }

    /// Minimum series length the split needs.
    pub fn required_length(&self) -> usize {
        self.context_length + self.test_windows * self.horizon
    }
}

/// One rolling evaluation window.
#[derive(Clone, Debug, PartialEq)]
pub struct TestWindow {
    pub context: TimeSeries,
    pub actual: TimeSeries,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: TimeSeries,
    pub windows: Vec<TestWindow>,
}

/// Carve terminal, non-overlapping test windows (stride = horizon) off the
/// end of `series`; everything before the first window's target is training
/// data.
pub fn split_train_test(series: &TimeSeries, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = series.len();
    let required = spec.required_length();
    if n < required {
        return Err(Error::sizing("train/test split", required, n));
    }
    let first_actual = n - spec.test_windows * spec.horizon;
    let train = series.slice(0..first_actual)?;
    let windows = (0..spec.test_windows)
        .map(|k| {
            let a = first_actual + k * spec.horizon;
            Ok(TestWindow {
                context: series.slice(a - spec.context_length..a)?,
                actual: series.slice(a..a + spec.horizon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Split { train, windows })
}

/// Scale ν = 1 + mean(context), always ≥ 1 for non-negative traces.
pub fn mean_scale(context: &[f64]) -> Result<f64> {
    if context.is_empty() {
        return Err(Error::Contract("mean_scale of an empty context".into()));
    }
    Ok(1.0 + context.iter().sum::<f64>() / context.len() as f64)
}
