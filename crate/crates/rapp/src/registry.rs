//! Per-series trained models with atomic replacement.
//!
//! Readers clone an `Arc<Deployed>` and keep using it even if a newer
//! model is swapped in meanwhile. On disk a model is a directory of
//! `checkpoint.json`, `meta.json` and, after a holdout run, `report.json`
//! plus `holdout.csv`; `meta.json` is renamed into place last and names the
//! checkpoint hash, so a half-written replacement is never loaded.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use prbcast_core::forecasters::{ModelConfig, ModelKind, TrainedModel};
use prbcast_core::hash::fingerprint;
use prbcast_core::metrics::EvaluationReport;

use crate::error::{ApiError, ApiResult};

const MODEL_DIR: &str = "model";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const META_FILE: &str = "meta.json";
const REPORT_FILE: &str = "report.json";
pub const HOLDOUT_CSV: &str = "holdout.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub series_id: String,
    pub kind: ModelKind,
    pub model_hash: String,
    pub config_hash: String,
    pub final_loss: Option<f64>,
    pub duration_ms: u64,
    pub train_length: usize,
}

#[derive(Debug)]
pub struct Deployed {
    pub model: TrainedModel,
    pub meta: ModelMeta,
    pub report: Option<EvaluationReport>,
}

pub fn config_hash(config: &ModelConfig) -> String {
    fingerprint(serde_json::to_string(config).expect("config serializes").as_bytes())
}

pub struct ModelRegistry {
    series_root: PathBuf,
    models: RwLock<HashMap<String, Arc<Deployed>>>,
    training: Mutex<HashSet<String>>,
}

/// Held while a series trains; releases the slot on drop, also on panic.
pub struct TrainingSlot {
    registry: Arc<ModelRegistry>,
    id: String,
}

impl Drop for TrainingSlot {
    fn drop(&mut self) {
        self.registry.training.lock().unwrap().remove(&self.id);
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("i/o error on {}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> ApiResult<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl ModelRegistry {
    /// Load every persisted model under `<series_root>/<id>/model/`.
    /// Directories whose checkpoint does not match their metadata are
    /// skipped.
    pub fn open(series_root: impl Into<PathBuf>) -> ApiResult<Self> {
        let series_root = series_root.into();
        let mut models = HashMap::new();
        if let Ok(entries) = fs::read_dir(&series_root) {
            for e in entries.flatten() {
                let id = e.file_name().to_string_lossy().into_owned();
                if let Some(d) = load_deployed(&e.path().join(MODEL_DIR)) {
                    models.insert(id, Arc::new(d));
                }
            }
        }
        Ok(Self {
            series_root,
            models: RwLock::new(models),
            training: Mutex::new(HashSet::new()),
        })
    }

    pub fn get(&self, id: &str) -> Option<Arc<Deployed>> {
        self.models.read().unwrap().get(id).cloned()
    }

    pub fn model_dir(&self, id: &str) -> PathBuf {
        self.series_root.join(id).join(MODEL_DIR)
    }

    /// Claim the training slot of `id`, or 409 if a training is running.
    pub fn begin_training(self: &Arc<Self>, id: &str) -> ApiResult<TrainingSlot> {
        if !self.training.lock().unwrap().insert(id.to_string()) {
            return Err(ApiError::conflict(format!("training already in progress for `{id}`")));
        }
        Ok(TrainingSlot {
            registry: self.clone(),
            id: id.to_string(),
        })
    }

    /// Persist and then publish a model. `holdout_csv` accompanies a report.
    pub fn install(&self, deployed: Deployed, holdout_csv: Option<&str>) -> ApiResult<Arc<Deployed>> {
        let id = deployed.meta.series_id.clone();
        let dir = self.model_dir(&id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_atomic(&dir.join(CHECKPOINT_FILE), deployed.model.to_checkpoint_json().as_bytes())?;
        match (&deployed.report, holdout_csv) {
            (Some(report), csv) => {
                let body = serde_json::to_vec_pretty(report).expect("report serializes");
                write_atomic(&dir.join(REPORT_FILE), &body)?;
                if let Some(csv) = csv {
                    write_atomic(&dir.join(HOLDOUT_CSV), csv.as_bytes())?;
                }
            }
            (None, _) => {
                for f in [REPORT_FILE, HOLDOUT_CSV] {
                    let _ = fs::remove_file(dir.join(f));
                }
            }
        }
        let meta = serde_json::to_vec_pretty(&deployed.meta).expect("meta serializes");
        write_atomic(&dir.join(META_FILE), &meta)?;
        let deployed = Arc::new(deployed);
        self.models.write().unwrap().insert(id, deployed.clone());
        Ok(deployed)
    }
}

fn load_deployed(dir: &Path) -> Option<Deployed> {
    let meta: ModelMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE)).ok()?).ok()?;
    let model = TrainedModel::load(dir.join(CHECKPOINT_FILE)).ok()?;
    if model.fingerprint() != meta.model_hash {
        return None;
    }
    let report = fs::read(dir.join(REPORT_FILE))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok());
    Some(Deployed { model, meta, report })
}
