use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, SecondsFormat};

use prbcast_core::backtest::{
    evaluate_trained, render_forecast_csv, run_to_dir, ExperimentConfig, ModelRun,
};
use prbcast_core::forecasters::{self, ModelConfig, ModelKind, TrainedModel};
use prbcast_core::series::{
    generate_prb_trace, load_trace, render_trace, save_trace, split_train_test, SplitSpec, TimeSeries,
    TraceGenConfig,
};
use prbcast_rapp::{ConfigLayer, ServiceConfig};

use crate::plot::{forecast_svg, histogram_svg};
use crate::{BacktestArgs, Chart, EvalArgs, ForecastArgs, GenArgs, PlotArgs, ServeArgs, SplitArgs, TrainArgs};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<prbcast_core::Error> for CliError {
    fn from(e: prbcast_core::Error) -> Self {
        let code = if e.is_validation() { 1 } else { 2 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Inputs that cannot be read are the caller's mistake (exit 1).
fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_input_trace(path: &Path) -> Result<TimeSeries, CliError> {
    read_input(path)?;
    Ok(load_trace(path)?)
}

fn write_output(path: &Path, contents: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn stdout(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::runtime(format!("cannot write stdout: {e}")))
}

fn json_line(value: serde_json::Value) -> CliResult {
    stdout(&format!("{}\n", serde_json::to_string_pretty(&value).expect("json serializes")))
}

pub fn gen(a: GenArgs) -> CliResult {
    let mut config = match &a.config {
        Some(p) => toml::from_str::<TraceGenConfig>(&read_input(p)?)
            .map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?,
        None => TraceGenConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.length {
        config.length = n;
    }
    let trace = generate_prb_trace(&config)?;
    match &a.out {
        Some(p) => write_output(p, &render_trace(&trace)),
        None => stdout(&render_trace(&trace)),
    }
}

pub fn split(a: SplitArgs) -> CliResult {
    let trace = load_input_trace(&a.input)?;
    let spec = SplitSpec {
        context_length: a.context,
        horizon: a.horizon,
        test_windows: a.windows,
    };
    let split = split_train_test(&trace, &spec)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", a.out.display())))?;
    let save = |name: String, s: &TimeSeries| -> CliResult {
        save_trace(s, a.out.join(name))?;
        Ok(())
    };
    save("train.csv".into(), &split.train)?;
    for (k, w) in split.windows.iter().enumerate() {
        save(format!("window_{k}_context.csv"), &w.context)?;
        save(format!("window_{k}_actual.csv"), &w.actual)?;
    }
    json_line(serde_json::json!({
        "train_length": split.train.len(),
        "windows": split.windows.len(),
        "context_length": a.context,
        "horizon": a.horizon,
    }))
}

fn load_model_config(path: &Path) -> Result<ModelConfig, CliError> {
    let text = read_input(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut config = match &a.config {
        Some(p) => load_model_config(p)?,
        None => ModelConfig::new(a.kind.unwrap_or(ModelKind::Deepar)),
    };
    if let Some(k) = a.kind {
        config.kind = k;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(c) = a.context {
        config.context_length = c;
    }
    if let Some(h) = a.horizon {
        config.horizon = h;
    }
    config.validate()?;
    let trace = load_input_trace(&a.input)?;
    let model = forecasters::train(&trace, &config)?;
    write_output(&a.out, &model.to_checkpoint_json())?;
    json_line(serde_json::json!({
        "kind": model.kind(),
        "final_loss": model.summary().final_loss,
        "train_length": model.summary().train_length,
        "fingerprint": model.fingerprint(),
        "checkpoint": a.out,
    }))
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    read_input(path)?;
    Ok(TrainedModel::load(path)?)
}

pub fn eval(a: EvalArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let trace = load_input_trace(&a.input)?;
    let spec = SplitSpec {
        context_length: model.config().context_length,
        horizon: model.config().horizon,
        test_windows: a.windows,
    };
    let split = split_train_test(&trace, &spec)?;
    let season = a.season.unwrap_or(model.config().season_length);
    let (windows, report) = evaluate_trained(&model, &split, spec.horizon, season)?;
    if let Some(path) = &a.csv {
        let run = ModelRun {
            kind: model.kind(),
            seed: model.config().seed,
            model: model.clone(),
            windows,
            report: report.clone(),
        };
        write_output(path, &render_forecast_csv(&run, &[])?)?;
    }
    json_line(serde_json::to_value(&report).expect("report serializes"))
}

fn parse_levels(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::invalid(format!("level `{s}` is not a number")))?;
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err(CliError::invalid(format!("level {v} outside (0, 1)")))
            }
        })
        .collect()
}

pub fn forecast(a: ForecastArgs) -> CliResult {
    let levels = parse_levels(&a.levels)?;
    let model = load_model(&a.model)?;
    let context = load_input_trace(&a.input)?;
    let horizon = a.horizon.unwrap_or(model.config().horizon);
    let f = model.forecast(&context, horizon, a.seed)?;
    let q = f.quantiles(&levels)?;
    let mut out = String::from("step,timestamp");
    for l in &levels {
        out.push_str(&format!(",q{l}"));
    }
    out.push('\n');
    let start = f.start();
    for step in 0..horizon {
        let ts = start + Duration::seconds(context.step_seconds() * step as i64);
        out.push_str(&format!("{step},{}", ts.to_rfc3339_opts(SecondsFormat::Secs, true)));
        for row in &q {
            out.push_str(&format!(",{}", row[step]));
        }
        out.push('\n');
    }
    match &a.out {
        Some(p) => write_output(p, &out),
        None => stdout(&out),
    }
}

pub fn backtest(a: BacktestArgs) -> CliResult {
    let mut config = match &a.config {
        Some(p) => {
            read_input(p)?;
            ExperimentConfig::load(p)?
        }
        None => ExperimentConfig::standard(),
    };
    if let Some(s) = a.seed {
        config.master_seed = s;
    }
    let out: PathBuf = a
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::invalid("no output directory: pass --out or set output_dir"))?;
    let result = run_to_dir(&config, &out)?;
    for run in &result.runs {
        let name = format!("forecast_{}", run.kind);
        let csv = read_input(&out.join(format!("{name}.csv")))?;
        let svg = forecast_svg(&csv, &format!("{} forecast", run.kind.label())).map_err(|e| CliError::runtime(e.to_string()))?;
        write_output(&out.join(format!("{name}.svg")), &svg)?;
    }
    let csv = read_input(&out.join("histogram.csv"))?;
    let svg = histogram_svg(&csv, "Sample-path histogram").map_err(|e| CliError::runtime(e.to_string()))?;
    write_output(&out.join("histogram.svg"), &svg)?;
    stdout(&result.table.render_text())
}

pub fn serve(a: ServeArgs) -> CliResult {
    let file = match &a.config {
        Some(p) => {
            read_input(p)?;
            Some(ConfigLayer::from_file(p)?)
        }
        None => None,
    };
    let env = ConfigLayer::from_env(|k| std::env::var(k).ok())?;
    let flags = ConfigLayer {
        bind: a.bind,
        port: a.port,
        data_dir: a.data_dir,
        capacity: a.capacity,
        ..ConfigLayer::default()
    };
    let config = ServiceConfig::resolve(file.as_ref(), &env, &flags)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(format!("cannot start runtime: {e}")))?;
    runtime
        .block_on(prbcast_rapp::serve(
            config,
            async {
                let _ = tokio::signal::ctrl_c().await;
            },
            |addr| eprintln!("listening on http://{addr}"),
        ))
        .map_err(|e| CliError::runtime(e.to_string()))
}

type Renderer = fn(&str, &str) -> Result<String, crate::plot::PlotError>;

pub fn plot(a: PlotArgs) -> CliResult {
    let (io, render): (_, Renderer) = match a.chart {
        Chart::Forecast(io) => (io, forecast_svg),
        Chart::Histogram(io) => (io, histogram_svg),
    };
    let csv = read_input(&io.input)?;
    let title = io.title.clone().unwrap_or_else(|| {
        io.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let svg = render(&csv, &title).map_err(|e| CliError::invalid(format!("{}: {e}", io.input.display())))?;
    write_output(&io.out, &svg)
}
