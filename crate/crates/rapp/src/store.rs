//! Durable per-series observation store.
//!
//! Each series lives in `<root>/series/<id>/`. Every accepted batch is one
//! line of `log.ndjson`, fsynced before the batch is acknowledged, so a
//! crash loses at most the unacknowledged batch whose line is torn.
//! `snapshot.json` periodically records the window and the log offset it
//! covers; replay loads it and applies the remaining log lines.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use prbcast_core::series::TimeSeries;

use crate::error::{ApiError, ApiResult};

pub const MAX_BATCH_POINTS: usize = 10_000;
const LOG_FILE: &str = "log.ndjson";
const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_TMP: &str = "snapshot.json.tmp";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: DateTime<Utc>,
    pub value: f64,
}

/// Everything stored for one series, on its regular time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub series_id: String,
    pub start: DateTime<Utc>,
    pub step_seconds: i64,
    pub values: Vec<f64>,
}

impl SeriesWindow {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_seconds * index as i64)
    }

    pub fn to_series(&self, capacity: f64) -> prbcast_core::Result<TimeSeries> {
        TimeSeries::new(
            self.series_id.clone(),
            self.start,
            self.step_seconds,
            self.values.clone(),
            capacity,
        )
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        self.values.iter().enumerate().map(|(i, &value)| Observation {
            timestamp: self.timestamp(i),
            value,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub duplicates: usize,
    pub length: usize,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    points: Vec<Observation>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    window: SeriesWindow,
    log_offset: u64,
}

struct LogWriter {
    dir: PathBuf,
    file: File,
    offset: u64,
    since_snapshot: usize,
}

struct SeriesEntry {
    writer: Mutex<LogWriter>,
    window: RwLock<Arc<SeriesWindow>>,
}

pub struct SeriesStore {
    root: PathBuf,
    capacity: f64,
    step_seconds: i64,
    snapshot_every: usize,
    series: RwLock<HashMap<String, Arc<SeriesEntry>>>,
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("i/o error on {}: {e}", path.display()))
}

/// Series ids become directory names, so they are restricted.
pub fn validate_series_id(id: &str) -> ApiResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!(
            "invalid series id `{id}`: use 1-64 characters from [A-Za-z0-9._-]"
        )))
    }
}

impl SeriesStore {
    /// Open `root`, replaying every series found on disk.
    pub fn open(root: impl Into<PathBuf>, capacity: f64, step_seconds: i64, snapshot_every: usize) -> ApiResult<Self> {
        let root = root.into();
        let series_dir = root.join("series");
        fs::create_dir_all(&series_dir).map_err(|e| io_err(&series_dir, e))?;
        let mut series = HashMap::new();
        let mut names: Vec<_> = fs::read_dir(&series_dir)
            .map_err(|e| io_err(&series_dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(LOG_FILE).exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for id in names {
            let entry = replay(&series_dir.join(&id), &id, step_seconds)?;
            series.insert(id, Arc::new(entry));
        }
        Ok(Self {
            root,
            capacity,
            step_seconds,
            snapshot_every,
            series: RwLock::new(series),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn series_dir(&self, id: &str) -> PathBuf {
        self.root.join("series").join(id)
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.series.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Current window, or `None` for an unknown series. The returned value
    /// is an immutable snapshot; concurrent ingestion swaps in a new one.
    pub fn window(&self, id: &str) -> Option<Arc<SeriesWindow>> {
        let entry = self.series.read().unwrap().get(id).cloned()?;
        let window = entry.window.read().unwrap().clone();
        (!window.is_empty()).then_some(window)
    }

    fn entry(&self, id: &str, first: &Observation) -> ApiResult<Arc<SeriesEntry>> {
        if let Some(e) = self.series.read().unwrap().get(id) {
            return Ok(e.clone());
        }
        let mut map = self.series.write().unwrap();
        if let Some(e) = map.get(id) {
            return Ok(e.clone());
        }
        let dir = self.series_dir(id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        sync_dir(&dir)?;
        let entry = Arc::new(SeriesEntry {
            writer: Mutex::new(LogWriter {
                dir,
                file,
                offset: 0,
                since_snapshot: 0,
            }),
            window: RwLock::new(Arc::new(SeriesWindow {
                series_id: id.to_string(),
                start: first.timestamp,
                step_seconds: self.step_seconds,
                values: Vec::new(),
            })),
        });
        map.insert(id.to_string(), entry.clone());
        Ok(entry)
    }

    /// Validate and durably append a batch. The batch is all-or-nothing:
    /// any invalid point rejects it with the index of the first offender.
    pub fn ingest(&self, id: &str, points: &[Observation]) -> ApiResult<IngestOutcome> {
        validate_series_id(id)?;
        if points.len() > MAX_BATCH_POINTS {
            return Err(ApiError::too_large(points.len(), MAX_BATCH_POINTS));
        }
        let Some(first) = points.first() else {
            let length = self.window(id).map_or(0, |w| w.len());
            return Ok(IngestOutcome {
                accepted: 0,
                duplicates: 0,
                length,
            });
        };
        // Validate values before creating anything on disk.
        for (i, p) in points.iter().enumerate() {
            if !(p.value.is_finite() && p.value >= 0.0 && p.value <= self.capacity) {
                return Err(ApiError::bad_point(
                    i,
                    format!("value {} at index {i} outside [0, {}]", p.value, self.capacity),
                ));
            }
        }
        let entry = self.entry(id, first)?;
        let mut writer = entry.writer.lock().unwrap();
        let mut current = entry.window.read().unwrap().clone();
        if current.is_empty() {
            // the first accepted point fixes the grid
            current = Arc::new(SeriesWindow {
                start: first.timestamp,
                ..(*current).clone()
            });
        }
        let (fresh, duplicates) = plan(&current, points)?;
        if fresh.is_empty() {
            return Ok(IngestOutcome {
                accepted: 0,
                duplicates,
                length: current.len(),
            });
        }
        let mut line = serde_json::to_string(&LogLine { points: fresh.clone() }).expect("log line serializes");
        line.push('\n');
        let path = writer.dir.join(LOG_FILE);
        writer.file.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        writer.file.sync_data().map_err(|e| io_err(&path, e))?;
        writer.offset += line.len() as u64;

        let mut next = (*current).clone();
        next.values.extend(fresh.iter().map(|p| p.value));
        let next = Arc::new(next);
        *entry.window.write().unwrap() = next.clone();

        writer.since_snapshot += 1;
        if writer.since_snapshot >= self.snapshot_every {
            write_snapshot(&writer.dir, &next, writer.offset)?;
            writer.since_snapshot = 0;
        }
        Ok(IngestOutcome {
            accepted: fresh.len(),
            duplicates,
            length: next.len(),
        })
    }
}

/// Split a batch into new points and exact duplicates of stored ones.
fn plan(window: &SeriesWindow, points: &[Observation]) -> ApiResult<(Vec<Observation>, usize)> {
    let step = window.step_seconds;
    let mut fresh: Vec<Observation> = Vec::new();
    let mut duplicates = 0;
    for (i, p) in points.iter().enumerate() {
        if i > 0 && p.timestamp <= points[i - 1].timestamp {
            return Err(ApiError::bad_point(
                i,
                format!("timestamp {} at index {i} does not advance", p.timestamp.to_rfc3339()),
            ));
        }
        let delta = (p.timestamp - window.start).num_seconds();
        let exact = window.start + Duration::seconds(delta) == p.timestamp;
        if delta < 0 {
            return Err(ApiError::bad_point(
                i,
                format!("timestamp {} at index {i} precedes the series start", p.timestamp.to_rfc3339()),
            ));
        }
        if !exact || delta % step != 0 {
            return Err(ApiError::bad_point(
                i,
                format!("timestamp {} at index {i} is off the {step} s grid", p.timestamp.to_rfc3339()),
            ));
        }
        let k = (delta / step) as usize;
        let known = window.len() + fresh.len();
        if k < known {
            let stored = if k < window.len() {
                window.values[k]
            } else {
                fresh[k - window.len()].value
            };
            if stored == p.value {
                duplicates += 1;
            } else {
                return Err(ApiError::bad_point(
                    i,
                    format!(
                        "timestamp {} at index {i} regresses: already stored with value {stored}",
                        p.timestamp.to_rfc3339()
                    ),
                ));
            }
        } else if k == known {
            fresh.push(*p);
        } else {
            return Err(ApiError::bad_point(
                i,
                format!(
                    "timestamp {} at index {i} leaves a gap; next expected {}",
                    p.timestamp.to_rfc3339(),
                    window.timestamp(known).to_rfc3339()
                ),
            ));
        }
    }
    Ok((fresh, duplicates))
}

fn sync_dir(dir: &Path) -> ApiResult<()> {
    File::open(dir)
        .and_then(|d| d.sync_all())
        .map_err(|e| io_err(dir, e))
}

fn write_snapshot(dir: &Path, window: &SeriesWindow, log_offset: u64) -> ApiResult<()> {
    let tmp = dir.join(SNAPSHOT_TMP);
    let body = serde_json::to_vec(&Snapshot {
        window: window.clone(),
        log_offset,
    })
    .expect("snapshot serializes");
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(&body).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    let dst = dir.join(SNAPSHOT_FILE);
    fs::rename(&tmp, &dst).map_err(|e| io_err(&dst, e))?;
    sync_dir(dir)
}

/// Rebuild one series from its snapshot and log. A torn final line (a
/// batch whose write never completed) is cut off; corruption anywhere
/// else is an error.
fn replay(dir: &Path, id: &str, step_seconds: i64) -> ApiResult<SeriesEntry> {
    let _ = fs::remove_file(dir.join(SNAPSHOT_TMP));
    let snapshot: Option<Snapshot> = fs::read(dir.join(SNAPSHOT_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    let log_path = dir.join(LOG_FILE);
    let log_len = fs::metadata(&log_path).map_err(|e| io_err(&log_path, e))?.len();
    let (mut window, mut offset) = match snapshot {
        Some(s) if s.log_offset <= log_len && s.window.step_seconds == step_seconds => (Some(s.window), s.log_offset),
        _ => (None, 0),
    };

    let mut file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    file.seek(SeekFrom::Start(offset)).map_err(|e| io_err(&log_path, e))?;
    let mut reader = BufReader::new(&mut file);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| io_err(&log_path, e))?;
        if n == 0 {
            break;
        }
        let complete = buf.last() == Some(&b'\n');
        let parsed = if complete {
            serde_json::from_slice::<LogLine>(&buf[..n - 1]).ok()
        } else {
            None
        };
        let Some(line) = parsed else {
            if offset + n as u64 == log_len {
                break; // torn tail
            }
            return Err(ApiError::internal(format!(
                "corrupt log line at byte {offset} of {}",
                log_path.display()
            )));
        };
        if line.points.is_empty() {
            offset += n as u64;
            continue;
        }
        let w = window.get_or_insert_with(|| SeriesWindow {
            series_id: id.to_string(),
            start: line.points.first().map_or_else(Utc::now, |p| p.timestamp),
            step_seconds,
            values: Vec::new(),
        });
        let (fresh, _) = plan(w, &line.points)
            .map_err(|e| ApiError::internal(format!("inconsistent log {}: {}", log_path.display(), e.message)))?;
        w.values.extend(fresh.iter().map(|p| p.value));
        offset += n as u64;
    }
    drop(reader);
    if offset < log_len {
        file.set_len(offset).map_err(|e| io_err(&log_path, e))?;
        file.sync_all().map_err(|e| io_err(&log_path, e))?;
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;
    let window = window.unwrap_or_else(|| SeriesWindow {
        series_id: id.to_string(),
        start: DateTime::<Utc>::UNIX_EPOCH,
        step_seconds,
        values: Vec::new(),
    });
    Ok(SeriesEntry {
        writer: Mutex::new(LogWriter {
            dir: dir.to_path_buf(),
            file,
            offset,
            since_snapshot: 0,
        }),
        window: RwLock::new(Arc::new(window)),
    })
}
