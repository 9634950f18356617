use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{Duration, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

use prbcast_core::forecasters::seasonal_naive;
use prbcast_core::metrics::mse;
use prbcast_rapp::{router, AppState, ServiceConfig};

fn state(dir: &TempDir) -> AppState {
    AppState::open(ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        snapshot_every: 3,
        ..ServiceConfig::default()
    })
    .unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null), text)
}

fn points(from: i64, values: &[f64]) -> Value {
    let t0 = Utc.with_ymd_and_hms(2024, 5, 6, 0, 0, 0).unwrap();
    Value::Array(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ts = t0 + Duration::seconds(900 * (from + i as i64));
                json!({ "timestamp": ts.to_rfc3339(), "value": v })
            })
            .collect(),
    )
}

fn wave(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 100.0 + 40.0 * (std::f64::consts::TAU * i as f64 / 8.0).sin() + ((i * 37) % 11) as f64)
        .collect()
}

fn small_deepar() -> Value {
    json!({
        "kind": "deepar", "context_length": 16, "horizon": 8, "hidden_size": 8, "num_layers": 1,
        "epochs": 15, "batch_size": 8, "learning_rate": 0.01, "num_sample_paths": 50,
        "season_length": 8, "seed": 4
    })
}

#[tokio::test]
async fn healthz_is_ok() {
    let dir = TempDir::new().unwrap();
    let app = router(state(&dir));
    let (status, _, text) = call(&app, "GET", "/healthz", None).await;
    assert_eq!((status, text.as_str()), (StatusCode::OK, "ok"));
}

#[tokio::test]
async fn ingestion_contract() {
    let dir = TempDir::new().unwrap();
    let app = router(state(&dir));
    let url = "/v1/series/cell-1/observations";

    let (s, b, _) = call(&app, "POST", url, Some(json!([]))).await;
    assert_eq!((s, b["accepted"].as_u64()), (StatusCode::ACCEPTED, Some(0)));

    let values = wave(96);
    let (s, b, _) = call(&app, "POST", url, Some(points(0, &values))).await;
    assert_eq!((s, b["accepted"].as_u64()), (StatusCode::ACCEPTED, Some(96)));
    let (s, b, _) = call(&app, "POST", url, Some(points(0, &values))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!((b["accepted"].as_u64(), b["duplicates"].as_u64()), (Some(0), Some(96)));

    let (s, b, _) = call(&app, "GET", url, None).await;
    assert_eq!(s, StatusCode::OK);
    let got: Vec<f64> = b["observations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["value"].as_f64().unwrap())
        .collect();
    assert_eq!(got, values);
    assert_eq!(b["observations"][0]["timestamp"], "2024-05-06T00:00:00Z");

    let (s, b, _) = call(&app, "POST", url, Some(points(96, &[1.0, 500.0]))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(b["code"], "bad_request");
    assert_eq!(b["detail"]["index"], 1);

    let (s, b, _) = call(&app, "POST", url, Some(json!([{"timestamp": "nope", "value": 1}]))).await;
    assert_eq!((s, b["detail"]["index"].as_u64()), (StatusCode::BAD_REQUEST, Some(0)));
    let (s, _, _) = call(&app, "POST", url, Some(json!({"timestamp": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, b, _) = call(&app, "POST", url, Some(points(96, &vec![1.0; 10_001]))).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(b["code"], "payload_too_large");

    let (s, _, _) = call(&app, "GET", "/v1/series/other/observations", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn training_errors() {
    let dir = TempDir::new().unwrap();
    let st = state(&dir);
    let app = router(st.clone());
    let (s, _, _) = call(&app, "POST", "/v1/series/none/train", Some(small_deepar())).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    call(&app, "POST", "/v1/series/c/observations", Some(points(0, &wave(10)))).await;
    let (s, b, _) = call(&app, "POST", "/v1/series/c/train", Some(small_deepar())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{b}");
    assert_eq!(b["detail"]["available"], 10);
    assert!(b["detail"]["required"].as_u64().unwrap() > 10);

    let (s, b, _) = call(&app, "POST", "/v1/series/c/train", Some(json!({"kind": "deepar", "bogus": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{b}");
    let (s, b, _) = call(&app, "POST", "/v1/series/c/train", Some(json!({"kind": "deepar", "horizon": 0}))).await;
    assert_eq!((s, b["detail"]["field"].as_str()), (StatusCode::BAD_REQUEST, Some("horizon")));

    let _slot = st.registry.begin_training("c").unwrap();
    let (s, b, _) = call(&app, "POST", "/v1/series/c/train", Some(small_deepar())).await;
    assert_eq!((s, b["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));
    drop(_slot);
    assert!(st.registry.begin_training("c").is_ok());
}

#[tokio::test]
async fn point_baseline_serves_its_point_forecast() {
    let dir = TempDir::new().unwrap();
    let app = router(state(&dir));
    let values = wave(40);
    call(&app, "POST", "/v1/series/c/observations", Some(points(0, &values))).await;
    let cfg = json!({"kind": "seasonal_naive", "context_length": 16, "horizon": 8, "season_length": 8});
    let (s, b, _) = call(&app, "POST", "/v1/series/c/train", Some(cfg)).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    assert!(b["final_loss"].is_null());

    let (s, _, _) = call(&app, "GET", "/v1/series/c/report", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, b, _) = call(&app, "GET", "/v1/series/c/forecast?horizon=12&levels=0.5", None).await;
    assert_eq!(s, StatusCode::OK, "{b}");
    let got: Vec<f64> = serde_json::from_value(b["quantiles"]["0.5"].clone()).unwrap();
    assert_eq!(got, seasonal_naive(&values, 8, 12).unwrap());
    assert_eq!(b["start"], "2024-05-06T10:00:00Z");
    assert_eq!(b["step_seconds"], 900);

    for bad in ["0", "1.0", "x", "0.5,0.5", "-0.1"] {
        let (s, _, _) = call(&app, "GET", &format!("/v1/series/c/forecast?levels={bad}"), None).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
    }
}

#[tokio::test]
async fn probabilistic_round_trip_with_holdout_and_restart() {
    let dir = TempDir::new().unwrap();
    let app = router(state(&dir));
    call(&app, "POST", "/v1/series/c/observations", Some(points(0, &wave(120)))).await;

    let mut cfg = small_deepar();
    cfg["holdout"] = json!(true);
    cfg["holdout_windows"] = json!(2);
    let (s, trained, _) = call(&app, "POST", "/v1/series/c/train", Some(cfg)).await;
    assert_eq!(s, StatusCode::OK, "{trained}");
    assert!(trained["final_loss"].as_f64().unwrap().is_finite());
    assert_eq!(trained["train_length"], 104);

    let (s, report, _) = call(&app, "GET", "/v1/series/c/report", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report, trained["report"]);
    for field in ["mse", "mae_eq2", "mase_scaled", "mape", "nd"] {
        assert!(report[field].as_f64().unwrap().is_finite(), "{field}");
    }
    assert_eq!(report["levels"].as_array().unwrap().len(), 9);

    // the report is reproducible from the persisted holdout forecasts
    let csv = std::fs::read_to_string(dir.path().join("series/c/model/holdout.csv")).unwrap();
    let (mut actual, mut median) = (Vec::new(), Vec::new());
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        actual.push(cells[3].parse::<f64>().unwrap());
        median.push(cells[4].parse::<f64>().unwrap());
    }
    assert_eq!(actual.len(), 16);
    assert_eq!(mse(&actual, &median).unwrap(), report["mse"].as_f64().unwrap());

    let url = "/v1/series/c/forecast?horizon=8&levels=0.9,0.1,0.5&seed=7";
    let (s, f1, body1) = call(&app, "GET", url, None).await;
    assert_eq!(s, StatusCode::OK, "{f1}");
    assert_eq!(f1["levels"], json!([0.1, 0.5, 0.9]));
    let lo: Vec<f64> = serde_json::from_value(f1["quantiles"]["0.1"].clone()).unwrap();
    let mid: Vec<f64> = serde_json::from_value(f1["quantiles"]["0.5"].clone()).unwrap();
    let hi: Vec<f64> = serde_json::from_value(f1["quantiles"]["0.9"].clone()).unwrap();
    assert_eq!(lo.len(), 8);
    for i in 0..8 {
        assert!(lo[i] <= mid[i] && mid[i] <= hi[i]);
    }
    let (_, _, body2) = call(&app, "GET", url, None).await;
    assert_eq!(body1, body2);
    let (_, _, other_seed) = call(&app, "GET", "/v1/series/c/forecast?horizon=8&levels=0.9,0.1,0.5&seed=8", None).await;
    assert_ne!(body1, other_seed);

    let (s, _, _) = call(&app, "GET", "/v1/series/c/forecast?horizon=9", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    // a restarted service reloads the series and the model
    drop(app);
    let app = router(state(&dir));
    let (_, _, body3) = call(&app, "GET", url, None).await;
    assert_eq!(body1, body3);
    let (s, _, _) = call(&app, "GET", "/v1/series/c/report", None).await;
    assert_eq!(s, StatusCode::OK);

    // new data changes the data hash but keeps the model hash
    call(&app, "POST", "/v1/series/c/observations", Some(points(120, &[100.0]))).await;
    let (_, f4, _) = call(&app, "GET", url, None).await;
    assert_eq!(f4["model_hash"], f1["model_hash"]);
    assert_ne!(f4["data_hash"], f1["data_hash"]);
}

#[tokio::test]
async fn serves_over_tcp_until_shutdown() {
    let dir = TempDir::new().unwrap();
    let config = ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        port: 0,
        ..ServiceConfig::default()
    };
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let (addr_tx, addr_rx) = tokio::sync::oneshot::channel();
    let server = tokio::spawn(prbcast_rapp::serve(
        config,
        async {
            let _ = rx.await;
        },
        move |addr| {
            let _ = addr_tx.send(addr);
        },
    ));
    let addr = addr_rx.await.unwrap();
    let reply = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
            .unwrap();
        let mut reply = String::new();
        stream.read_to_string(&mut reply).unwrap();
        reply
    })
    .await
    .unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.ends_with("ok"));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
