use super::*;
use crate::metrics::{coverage, mape, mse, nd, quantile_loss, Aggregation};
use crate::series::TraceGenConfig;

fn tiny(kinds: &[ModelKind]) -> ExperimentConfig {
    let models = kinds
        .iter()
        .map(|&kind| ModelConfig {
            kind,
            hidden_size: 8,
            num_layers: 1,
            epochs: 4,
            batch_size: 8,
            num_sample_paths: 20,
            // deepar conditions on a seasonal lag inside the 96-step context
            season_length: if kind == ModelKind::Deepar { 48 } else { 96 },
            model_dim: 8,
            num_heads: 2,
            ..ModelConfig::new(kind)
        })
        .collect();
    ExperimentConfig {
        master_seed: 5,
        trace: TraceSource::Generate(TraceGenConfig {
            length: 500,
            ..TraceGenConfig::default()
        }),
        split: crate::series::SplitSpec {
            context_length: 96,
            horizon: 12,
            test_windows: 3,
        },
        models,
        metrics: MetricOptions {
            histogram_step: 2,
            ..MetricOptions::default()
        },
        output_dir: None,
    }
}

#[test]
fn standard_config_parses_and_validates() {
    let cfg = ExperimentConfig::standard();
    cfg.validate().unwrap();
    assert_eq!(cfg.models.len(), 5);
    assert_eq!(cfg.split.horizon, 48);
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn seeds_fan_out_by_name() {
    assert_ne!(derive_seed(1, ModelKind::Sff), derive_seed(1, ModelKind::Deepar));
    assert_eq!(derive_seed(1, ModelKind::Sff), derive_seed(0, ModelKind::Sff).wrapping_add(1));
    let a = tiny(&[ModelKind::Sff]).resolved_models()[0].seed;
    let b = tiny(&[ModelKind::Lstm, ModelKind::Sff]).resolved_models()[1].seed;
    assert_eq!(a, b);
}

#[test]
fn config_errors_name_the_field() {
    let mut cfg = tiny(&[ModelKind::Sff, ModelKind::Sff]);
    assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "models"));
    cfg.models.clear();
    assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "models"));
    let mut cfg = tiny(&[ModelKind::Sff]);
    cfg.metrics.histogram_step = 12;
    assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "metrics.histogram_step"));
    let mut cfg = tiny(&[ModelKind::Transformer]);
    cfg.models[0].num_heads = 3;
    assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "models.transformer.model_dim"));
    assert!(ExperimentConfig::from_toml("master_seed = 1\nbogus = 2").is_err());
}

#[test]
fn seasonal_naive_is_exact_on_a_noiseless_periodic_trace() {
    let mut cfg = tiny(&[ModelKind::SeasonalNaive]);
    cfg.trace = TraceSource::Generate(TraceGenConfig {
        length: 500,
        weekly_amplitude: 0.0,
        noise_sigma: 0.0,
        burst_rate: 0.0,
        ..TraceGenConfig::default()
    });
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.table.get("MSE", ModelKind::SeasonalNaive), Some(0.0));
    // perfectly seasonal history: MASE is undefined rather than an error
    assert_eq!(result.table.get("MASE", ModelKind::SeasonalNaive), None);
    assert_eq!(result.table.best("MSE"), Some("SN"));
}

#[test]
fn failures_name_the_model_and_leave_an_incomplete_manifest() {
    let mut cfg = tiny(&[ModelKind::SeasonalNaive, ModelKind::Lstm]);
    cfg.trace = TraceSource::Generate(TraceGenConfig {
        length: 96 + 36 + 10,
        ..TraceGenConfig::default()
    });
    let dir = tempfile::tempdir().unwrap();
    let err = run_to_dir(&cfg, dir.path()).unwrap_err();
    assert!(matches!(&err, Error::Model { model, .. } if model == "LSTM"), "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "incomplete");
    assert_eq!(manifest["failed_model"], "LSTM");
    assert!(!dir.path().join("table.json").exists());
}

fn read_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let j = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

#[test]
fn artifacts_are_deterministic_and_consistent() {
    let cfg = tiny(&ModelKind::ALL);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let result = run_to_dir(&cfg, a.path()).unwrap();
    run_to_dir(&cfg, b.path()).unwrap();
    let names = [
        "table.json",
        "table.txt",
        "histogram.csv",
        "manifest.json",
        "forecast_lstm.csv",
        "forecast_seasonal_naive.csv",
        "forecast_sff.csv",
        "forecast_deepar.csv",
        "forecast_transformer.csv",
    ];
    for name in names {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }

    // every table number is re-derivable from the CSVs
    let table: ComparisonTable =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("table.json")).unwrap()).unwrap();
    assert_eq!(table.columns, ["LSTM", "SN", "SFF", "DeepAR", "Transformer"]);
    for (kind, report) in ModelKind::ALL.iter().zip(&table.reports) {
        let text = std::fs::read_to_string(a.path().join(format!("forecast_{kind}.csv"))).unwrap();
        let (header, rows) = read_csv(&text);
        assert_eq!(rows.len(), 36);
        let actual = column(&header, &rows, "actual");
        let median = column(&header, &rows, "median");
        let close = |x: f64, y: Option<f64>| {
            let y = y.unwrap();
            assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{kind}: {x} vs {y}");
        };
        close(mse(&actual, &median).unwrap(), table.get("MSE", *kind));
        close(mape(&actual, &median).unwrap(), table.get("MAPE", *kind));
        if let Some(m) = table.get("MASE", *kind) {
            close(crate::metrics::mae_eq2(&actual, &median).unwrap() / report.mase_denominator, Some(m));
        }
        if *kind == ModelKind::Lstm {
            assert!(table.get("ND", *kind).is_none() && table.get("QL[0.5]", *kind).is_none());
            continue;
        }
        close(nd(&actual, &median).unwrap(), table.get("ND", *kind));
        for (q, col) in [(0.1, "q0.1"), (0.5, "median"), (0.9, "q0.9")] {
            let qv = column(&header, &rows, col);
            close(quantile_loss(&actual, &qv, q, Aggregation::Sum).unwrap(), table.get(&format!("QL[{q}]"), *kind));
            close(coverage(&actual, &qv).unwrap(), table.get(&format!("Coverage[{q}]"), *kind));
        }
    }
    assert_eq!(result.table, table);

    // histogram counts conserve the sample count
    let (header, rows) = read_csv(&std::fs::read_to_string(a.path().join("histogram.csv")).unwrap());
    assert_eq!(rows.len(), HISTOGRAM_BINS);
    for model in ["sff", "deepar", "transformer"] {
        let total: f64 = column(&header, &rows, &format!("count_{model}")).iter().sum();
        assert_eq!(total, 20.0, "{model}");
    }
    assert!(header.contains(&"marker_true".to_string()));
    assert!(header.contains(&"marker_seasonal_naive".to_string()));

    let text = result.table.render_text();
    assert!(text.lines().next().unwrap().starts_with("Metric"));
    assert_eq!(text.lines().filter(|l| l.starts_with("QL[") || l.starts_with("Coverage[")).count(), 6);
}

#[test]
fn histogram_edge_cases() {
    let h = histogram(&[("a".into(), vec![4.0; 10])], &[("true".into(), 4.0)]).unwrap();
    let occupied: Vec<usize> = h.counts[0].1.iter().filter(|&&c| c > 0).copied().collect();
    assert_eq!(occupied, vec![10]);
    assert_eq!(h.edges.len(), HISTOGRAM_BINS + 1);

    let samples = vec![("a".to_string(), vec![1.0, 5.0, 9.0]), ("b".to_string(), vec![-3.0, 2.0])];
    let h = histogram(&samples, &[("true".into(), 12.0)]).unwrap();
    assert_eq!(h.edges[0], -3.0);
    assert_eq!(*h.edges.last().unwrap(), 12.0);
    assert_eq!(h.counts[0].1.iter().sum::<usize>(), 3);
    assert_eq!(h.counts[1].1.iter().sum::<usize>(), 2);
    assert!(histogram(&[], &[]).is_err());
}

#[test]
fn best_marker_uses_distance_to_level_for_coverage() {
    let mk = |model: &str, cov: f64, mse: f64| {
        crate::metrics::score(model, &[mse.sqrt() + 1.0], Some(&vec![vec![1.0 + cov]; 9]), &[1.0], &[1.0, 2.0], 1).unwrap()
    };
    let a = mk("a", 0.0, 4.0);
    let b = mk("b", 1.0, 1.0);
    let t = ComparisonTable::from_reports([(ModelKind::Sff, &a), (ModelKind::Deepar, &b)]);
    assert_eq!(t.best("MSE"), Some("DeepAR"));
    // coverage 0 is closer to 0.1, coverage 1 closer to 0.9
    assert_eq!(t.best("Coverage[0.1]"), Some("SFF"));
    assert_eq!(t.best("Coverage[0.9]"), Some("DeepAR"));
}
