//! HTTP handlers.

use std::collections::BTreeMap;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use prbcast_core::backtest::{backtest_model, render_forecast_csv};
use prbcast_core::forecasters::{self, ModelConfig, ModelKind};
use prbcast_core::hash::fnv1a64;
use prbcast_core::series::SplitSpec;

use crate::error::{ApiError, ApiResult};
use crate::registry::{config_hash, Deployed, ModelMeta};
use crate::store::{validate_series_id, Observation, MAX_BATCH_POINTS};
use crate::AppState;

/// Large enough that an oversized batch reaches the point-count check and
/// gets a structured 413.
const BODY_LIMIT: usize = 64 * 1024 * 1024;
const DEFAULT_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/series/{id}/observations", post(ingest).get(observations))
        .route("/v1/series/{id}/train", post(train))
        .route("/v1/series/{id}/forecast", get(forecast))
        .route("/v1/series/{id}/report", get(report))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

fn parse_batch(body: &[u8]) -> ApiResult<Vec<Observation>> {
    let items: Vec<Value> = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("body must be a JSON array of observations: {e}")))?;
    if items.len() > MAX_BATCH_POINTS {
        return Err(ApiError::too_large(items.len(), MAX_BATCH_POINTS));
    }
    items
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v)
                .map_err(|e| ApiError::bad_point(i, format!("malformed observation at index {i}: {e}")))
        })
        .collect()
}

async fn ingest(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    validate_series_id(&id)?;
    let points = parse_batch(&body)?;
    let store = state.store.clone();
    // fsync happens inside; keep it off the async workers.
    let outcome = tokio::task::spawn_blocking(move || store.ingest(&id, &points))
        .await
        .map_err(|e| ApiError::internal(format!("ingestion task failed: {e}")))??;
    Ok((StatusCode::ACCEPTED, Json(outcome)).into_response())
}

async fn observations(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let window = state
        .store
        .window(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown series `{id}`")))?;
    let observations: Vec<Observation> = window.observations().collect();
    Ok(Json(json!({
        "series_id": id,
        "start": window.start,
        "step_seconds": window.step_seconds,
        "length": window.len(),
        "observations": observations,
    })))
}

#[derive(Serialize)]
struct TrainResponse {
    series_id: String,
    kind: ModelKind,
    final_loss: Option<f64>,
    duration_ms: u64,
    train_length: usize,
    model_hash: String,
    config_hash: String,
    report: Option<prbcast_core::metrics::EvaluationReport>,
}

/// Holdout options ride along with the model configuration in the body.
struct TrainRequest {
    config: ModelConfig,
    holdout_windows: Option<usize>,
}

fn parse_train(body: &[u8]) -> ApiResult<TrainRequest> {
    let mut obj: Map<String, Value> = if body.iter().all(u8::is_ascii_whitespace) {
        Map::new()
    } else {
        serde_json::from_slice(body)
            .map_err(|e| ApiError::bad_request(format!("body must be a JSON object: {e}")))?
    };
    let holdout = match obj.remove("holdout") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => b,
        Some(_) => return Err(ApiError::bad_request("`holdout` must be a boolean")),
    };
    let windows = match obj.remove("holdout_windows") {
        None | Some(Value::Null) => 1,
        Some(v) => match v.as_u64() {
            Some(n) if n > 0 => n as usize,
            _ => return Err(ApiError::bad_request("`holdout_windows` must be a positive integer")),
        },
    };
    let config: ModelConfig = serde_json::from_value(Value::Object(obj))
        .map_err(|e| ApiError::bad_request(format!("invalid model configuration: {e}")))?;
    config.validate()?;
    Ok(TrainRequest {
        config,
        holdout_windows: holdout.then_some(windows),
    })
}

async fn train(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<TrainResponse>> {
    let request = parse_train(&body)?;
    let window = state
        .store
        .window(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown series `{id}`")))?;
    if window.is_empty() {
        let required = request.config.context_length + request.config.horizon;
        return Err(prbcast_core::Error::Sizing {
            what: "training data".into(),
            required,
            available: 0,
        }
        .into());
    }
    let slot = state.registry.begin_training(&id)?;
    let capacity = state.store.capacity();
    let registry = state.registry.clone();
    tokio::task::spawn_blocking(move || {
        let _slot = slot;
        let series = window.to_series(capacity)?;
        let config = request.config;
        let started = Instant::now();
        let (model, train_length, report, csv) = match request.holdout_windows {
            Some(test_windows) => {
                let spec = SplitSpec {
                    context_length: config.context_length,
                    horizon: config.horizon,
                    test_windows,
                };
                let (run, train_length) = backtest_model(&series, config.clone(), &spec, config.season_length)?;
                let csv = render_forecast_csv(&run, &[])?;
                (run.model, train_length, Some(run.report), Some(csv))
            }
            None => (forecasters::train(&series, &config)?, series.len(), None, None),
        };
        let meta = ModelMeta {
            series_id: id,
            kind: model.kind(),
            model_hash: model.fingerprint(),
            config_hash: config_hash(model.config()),
            final_loss: model.summary().final_loss,
            duration_ms: started.elapsed().as_millis() as u64,
            train_length,
        };
        let deployed = registry.install(Deployed { model, meta, report }, csv.as_deref())?;
        let meta = &deployed.meta;
        Ok(Json(TrainResponse {
            series_id: meta.series_id.clone(),
            kind: meta.kind,
            final_loss: meta.final_loss,
            duration_ms: meta.duration_ms,
            train_length: meta.train_length,
            model_hash: meta.model_hash.clone(),
            config_hash: meta.config_hash.clone(),
            report: deployed.report.clone(),
        }))
    })
    .await
    .map_err(|e| ApiError::internal(format!("training task failed: {e}")))?
}

#[derive(Deserialize)]
struct ForecastQuery {
    horizon: Option<usize>,
    levels: Option<String>,
    seed: Option<u64>,
}

#[derive(Serialize)]
struct ForecastResponse {
    series_id: String,
    kind: ModelKind,
    model_hash: String,
    config_hash: String,
    data_hash: String,
    start: DateTime<Utc>,
    step_seconds: i64,
    horizon: usize,
    seed: u64,
    levels: Vec<f64>,
    quantiles: BTreeMap<String, Vec<f64>>,
}

fn parse_levels(raw: Option<&str>) -> ApiResult<Vec<f64>> {
    let Some(raw) = raw else {
        return Ok(DEFAULT_LEVELS.to_vec());
    };
    let mut levels = Vec::new();
    for part in raw.split(',') {
        let level: f64 = part
            .trim()
            .parse()
            .map_err(|_| ApiError::bad_request(format!("level `{part}` is not a number")))?;
        if !(level > 0.0 && level < 1.0) {
            return Err(ApiError::bad_request(format!("level {level} outside (0, 1)")));
        }
        if levels.contains(&level) {
            return Err(ApiError::bad_request(format!("level {level} repeated")));
        }
        levels.push(level);
    }
    levels.sort_by(f64::total_cmp);
    Ok(levels)
}

async fn forecast(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ForecastQuery>,
) -> ApiResult<Json<ForecastResponse>> {
    let levels = parse_levels(q.levels.as_deref())?;
    let window = state
        .store
        .window(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown series `{id}`")))?;
    let deployed = state
        .registry
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no model trained for `{id}`")))?;
    let horizon = q.horizon.unwrap_or(deployed.model.config().horizon);
    let seed = q.seed.unwrap_or(0);
    let capacity = state.store.capacity();
    tokio::task::spawn_blocking(move || {
        let series = window.to_series(capacity)?;
        let forecast = deployed.model.forecast(&series, horizon, seed)?;
        let values = forecast.quantiles(&levels)?;
        let mut data = Vec::with_capacity(16 + 8 * window.len());
        data.extend_from_slice(&window.start.timestamp().to_le_bytes());
        data.extend_from_slice(&window.step_seconds.to_le_bytes());
        for v in &window.values {
            data.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        Ok(Json(ForecastResponse {
            series_id: id,
            kind: deployed.meta.kind,
            model_hash: deployed.meta.model_hash.clone(),
            config_hash: deployed.meta.config_hash.clone(),
            data_hash: format!("{:016x}", fnv1a64(&data)),
            start: forecast.start(),
            step_seconds: window.step_seconds,
            horizon,
            seed,
            quantiles: levels.iter().map(|l| l.to_string()).zip(values).collect(),
            levels,
        }))
    })
    .await
    .map_err(|e| ApiError::internal(format!("forecast task failed: {e}")))?
}

async fn report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let deployed = state
        .registry
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no model trained for `{id}`")))?;
    match &deployed.report {
        Some(r) => Ok(Json(r).into_response()),
        None => Err(ApiError::not_found(format!(
            "no holdout report for `{id}`; train with \"holdout\": true"
        ))),
    }
}
