//! `prbcast`: generate traces, train and evaluate forecasters, run
//! backtests, plot their CSVs and serve the rApp.
//!
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 for
//! failures while running (training, numerics, I/O on outputs).

mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prbcast_core::forecasters::ModelKind;

#[derive(Parser)]
#[command(name = "prbcast", version, about = "Probabilistic PRB-utilization forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic PRB trace.
    Gen(GenArgs),
    /// Split a trace into a training part and rolling test windows.
    Split(SplitArgs),
    /// Train one model and write its checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the terminal windows of a trace.
    Eval(EvalArgs),
    /// Forecast quantiles after the end of a trace.
    Forecast(ForecastArgs),
    /// Run a full experiment and write its artifacts and charts.
    Backtest(BacktestArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Render a backtest CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Generator settings (TOML); omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of samples.
    #[arg(long)]
    pub length: Option<usize>,
    /// Output trace file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SplitArgs {
    /// Input trace file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 192)]
    pub context: usize,
    #[arg(long, default_value_t = 48)]
    pub horizon: usize,
    /// Number of non-overlapping test windows.
    #[arg(long, default_value_t = 4)]
    pub windows: usize,
    /// Output directory for `train.csv` and `window_<k>_{context,actual}.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training trace file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model configuration (TOML or JSON by extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model kind; overrides the configuration file.
    #[arg(long)]
    pub kind: Option<ModelKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Checkpoint file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Trace whose last `windows` horizons are held out.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub windows: usize,
    /// Season of the MASE denominator; defaults to the model's season.
    #[arg(long)]
    pub season: Option<usize>,
    /// Also write the per-step forecast CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct ForecastArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Context trace; the forecast starts one step after its end.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Steps to forecast; defaults to the trained horizon.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Comma-separated quantile levels in (0, 1).
    #[arg(long, default_value = "0.1,0.5,0.9")]
    pub levels: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BacktestArgs {
    /// Experiment configuration (TOML or JSON); the standard experiment if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Artifact directory; overrides `output_dir` of the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Service settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<std::net::IpAddr>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub capacity: Option<f64>,
}

#[derive(Args)]
pub struct PlotArgs {
    #[command(subcommand)]
    pub chart: Chart,
}

#[derive(Subcommand)]
pub enum Chart {
    /// Fan chart of a `forecast_<model>.csv`.
    Forecast(PlotIo),
    /// Bar chart of a `histogram.csv`.
    Histogram(PlotIo),
}

#[derive(Args)]
pub struct PlotIo {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Chart title; defaults to the input file name.
    #[arg(long)]
    pub title: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Forecast(a) => commands::forecast(a),
        Command::Backtest(a) => commands::backtest(a),
        Command::Serve(a) => commands::serve(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
