//! Trace files: one `# {json}` metadata line, a `timestamp,value` header,
//! then one row per sample with an RFC 3339 UTC timestamp.
//!
//! ```text
//! # {"series_id":"cell-0","step_seconds":900,"capacity":273.0}
//! timestamp,value
//! 2024-01-01T00:00:00Z,118.25
//! ```

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TraceMeta {
    series_id: String,
    step_seconds: i64,
    capacity: f64,
}

pub fn render_trace(series: &TimeSeries) -> String {
    let meta = TraceMeta {
        series_id: series.series_id().to_string(),
        step_seconds: series.step_seconds(),
        capacity: series.capacity(),
    };
    let mut out = String::with_capacity(32 * (series.len() + 2));
    out.push_str("# ");
    out.push_str(&serde_json::to_string(&meta).expect("trace metadata serializes"));
    out.push_str("\ntimestamp,value\n");
    for (i, v) in series.values().iter().enumerate() {
        out.push_str(&series.timestamp(i).to_rfc3339_opts(SecondsFormat::AutoSi, true));
        out.push(',');
        // `Display` for f64 prints the shortest string that round-trips.
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

pub fn save_trace(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_trace(series)).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<TimeSeries> {
    let parse_err = |line: usize, reason: String| Error::Parse { line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

    let (n, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty trace file".into()))?;
    let meta_json = first
        .strip_prefix('#')
        .ok_or_else(|| parse_err(n, "expected `# {metadata json}` line".into()))?;
    let meta: TraceMeta =
        serde_json::from_str(meta_json.trim()).map_err(|e| parse_err(n, e.to_string()))?;

    match lines.next() {
        Some((_, "timestamp,value")) => {}
        Some((n, other)) => {
            return Err(parse_err(n, format!("expected header `timestamp,value`, got `{other}`")))
        }
        None => return Err(parse_err(2, "missing header".into())),
    }

    let mut start: Option<DateTime<Utc>> = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (ts, value) = line
            .split_once(',')
            .ok_or_else(|| parse_err(n, "expected `timestamp,value`".into()))?;
        let ts = DateTime::parse_from_rfc3339(ts.trim())
            .map_err(|e| parse_err(n, format!("bad timestamp: {e}")))?
            .with_timezone(&Utc);
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| parse_err(n, format!("bad value: {e}")))?;
        if let Some(p) = prev {
            if ts <= p {
                return Err(parse_err(n, format!("timestamp {ts} does not advance past {p}")));
            }
            let gap = (ts - p).num_seconds();
            if gap != meta.step_seconds {
                return Err(parse_err(
                    n,
                    format!("gap of {gap} s breaks the {} s grid", meta.step_seconds),
                ));
            }
        }
        if !(value.is_finite() && (0.0..=meta.capacity).contains(&value)) {
            return Err(Error::Validation(format!(
                "line {n}: value {value} outside [0, {}]",
                meta.capacity
            )));
        }
        start.get_or_insert(ts);
        prev = Some(ts);
        values.push(value);
    }
    let start = start.ok_or_else(|| parse_err(3, "trace has no samples".into()))?;
    TimeSeries::new(meta.series_id, start, meta.step_seconds, values, meta.capacity)
}
