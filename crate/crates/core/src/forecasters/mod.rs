//! The five forecasters behind one train/forecast contract, plus the
//! distribution types they emit.

mod deepar;
mod distribution;
mod layers;
mod lstm;
mod miniature;
mod quantile;
mod seasonal_naive;
mod sff;
mod training;
mod transformer;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

pub use deepar::{deepar_sample_paths, train_deepar};
pub use distribution::{
    Forecast, ForecastDistribution, GaussianParams, PointForecast, Representation, SIGMA_FLOOR,
};
pub use lstm::{predict_lstm, train_lstm};
pub use miniature::{miniature_config, miniature_gradient_error};
pub use quantile::{check_level, empirical_quantile, gaussian_nll, inverse_normal_cdf};
pub use seasonal_naive::{seasonal_naive, seasonal_naive_forecast};
pub use sff::{predict_sff, train_sff};
pub use training::{TrainingSummary, GRAD_CLIP_NORM};
pub use transformer::{
    predict_transformer, train_transformer, transformer_diagnostics, TransformerDiagnostics, ENCODER_INPUT_DIM,
};

use crate::autodiff::{NamedTensor, ParamStore};
use crate::error::{Error, Result};
use crate::hash::fingerprint;
use crate::series::TimeSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lstm,
    SeasonalNaive,
    Sff,
    Deepar,
    Transformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Lstm,
        ModelKind::SeasonalNaive,
        ModelKind::Sff,
        ModelKind::Deepar,
        ModelKind::Transformer,
    ];

    /// Identifier used in configs, file names and URLs.
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::SeasonalNaive => "seasonal_naive",
            ModelKind::Sff => "sff",
            ModelKind::Deepar => "deepar",
            ModelKind::Transformer => "transformer",
        }
    }

    /// Column label in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Lstm => "LSTM",
            ModelKind::SeasonalNaive => "SN",
            ModelKind::Sff => "SFF",
            ModelKind::Deepar => "DeepAR",
            ModelKind::Transformer => "Transformer",
        }
    }

    pub fn is_probabilistic(self) -> bool {
        matches!(self, ModelKind::Sff | ModelKind::Deepar | ModelKind::Transformer)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm || k.label().to_ascii_lowercase() == norm || (norm == "sn" && *k == ModelKind::SeasonalNaive))
            .ok_or_else(|| Error::config("kind", format!("unknown model kind `{s}`")))
    }
}

/// Hyperparameters of one forecaster. One epoch is `batches_per_epoch`
/// minibatches of `batch_size` random training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub context_length: usize,
    pub horizon: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_sample_paths: usize,
    pub season_length: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Deepar,
            context_length: 192,
            horizon: 48,
            hidden_size: 40,
            num_layers: 2,
            epochs: 200,
            batches_per_epoch: 1,
            batch_size: 32,
            learning_rate: 1e-3,
            num_sample_paths: 100,
            season_length: 96,
            num_heads: 4,
            model_dim: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("context_length", self.context_length),
            ("horizon", self.horizon),
            ("season_length", self.season_length),
        ];
        let neural = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.kind == ModelKind::SeasonalNaive {
            if self.context_length < self.season_length {
                return Err(Error::config("context_length", "must cover one season"));
            }
            return Ok(());
        }
        for (field, v) in neural {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.kind == ModelKind::Deepar {
            if self.num_sample_paths < 2 {
                return Err(Error::config("num_sample_paths", "must be at least 2"));
            }
            // the seasonal lag input needs at least one conditioning step
            if self.season_length >= self.context_length {
                return Err(Error::config("season_length", "deepar needs context_length above season_length"));
            }
        }
        if self.kind == ModelKind::Transformer {
            if self.num_heads == 0 || self.model_dim == 0 {
                return Err(Error::config("num_heads", "transformer needs positive heads and model_dim"));
            }
            if !self.model_dim.is_multiple_of(self.num_heads) {
                return Err(Error::config("model_dim", "must be divisible by num_heads"));
            }
        }
        Ok(())
    }

    pub(crate) fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::config(
                "kind",
                format!("expected `{kind}`, configuration says `{}`", self.kind),
            ));
        }
        self.validate()
    }
}

/// Format version written into every checkpoint.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Learned state of one forecaster together with the configuration that
/// rebuilds its architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    config: ModelConfig,
    params: ParamStore<f64>,
    summary: TrainingSummary,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    kind: ModelKind,
    config: ModelConfig,
    summary: TrainingSummary,
    params: Vec<NamedTensor<f64>>,
}

/// Initialization stream for a configuration's weights.
pub(crate) fn init_rng(config: &ModelConfig) -> Pcg64 {
    Pcg64::seed_from_u64(config.seed)
}

impl TrainedModel {
    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore<f64>, summary: TrainingSummary) -> Self {
        Self {
            config,
            params,
            summary,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn summary(&self) -> &TrainingSummary {
        &self.summary
    }

    pub fn params(&self) -> &ParamStore<f64> {
        &self.params
    }

    /// Forecast `horizon` steps after the end of `context`.
    ///
    /// `seed` drives sampling for models that draw sample paths.
    pub fn forecast(&self, context: &TimeSeries, horizon: usize, seed: u64) -> Result<Forecast> {
        if horizon == 0 {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        if self.kind() != ModelKind::SeasonalNaive && horizon > self.config.horizon {
            return Err(Error::sizing("forecast horizon", horizon, self.config.horizon));
        }
        let full = match self.kind() {
            ModelKind::SeasonalNaive => {
                return Ok(Forecast::Point(seasonal_naive_forecast(
                    context,
                    self.config.season_length,
                    horizon,
                )?))
            }
            ModelKind::Lstm => Forecast::Point(predict_lstm(self, context)?),
            ModelKind::Sff => Forecast::Distribution(predict_sff(self, context)?),
            ModelKind::Deepar => Forecast::Distribution(deepar_sample_paths(
                self,
                context,
                horizon,
                self.config.num_sample_paths,
                seed,
            )?),
            ModelKind::Transformer => Forecast::Distribution(predict_transformer(self, context)?),
        };
        truncate(full, horizon)
    }

    pub fn to_checkpoint_json(&self) -> String {
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: self.config.kind,
            config: self.config.clone(),
            summary: self.summary.clone(),
            params: self.params.to_named(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        if ckpt.kind != ckpt.config.kind {
            return Err(Error::Serde("checkpoint kind disagrees with its config".into()));
        }
        ckpt.config.validate()?;
        let loaded = ParamStore::from_named(ckpt.params)?;
        // Rebuild the architecture to check names and shapes.
        let mut params = build_params(&ckpt.config)?;
        params.load_values(&loaded)?;
        Ok(Self {
            config: ckpt.config,
            params,
            summary: ckpt.summary,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }

    /// Content hash of the checkpoint (configuration and weights).
    pub fn fingerprint(&self) -> String {
        fingerprint(self.to_checkpoint_json().as_bytes())
    }
}

fn build_params(config: &ModelConfig) -> Result<ParamStore<f64>> {
    let mut store = ParamStore::new();
    let mut rng = init_rng(config);
    match config.kind {
        ModelKind::SeasonalNaive => {}
        ModelKind::Lstm => {
            lstm::LstmNet::build(config, &mut store, &mut rng);
        }
        ModelKind::Sff => {
            sff::SffNet::build(config, &mut store, &mut rng);
        }
        ModelKind::Deepar => {
            deepar::DeepArNet::build(config, &mut store, &mut rng);
        }
        ModelKind::Transformer => {
            transformer::TransformerNet::build(config, &mut store, &mut rng);
        }
    }
    Ok(store)
}

fn truncate(forecast: Forecast, horizon: usize) -> Result<Forecast> {
    Ok(match forecast {
        Forecast::Point(mut p) => {
            p.values.truncate(horizon);
            Forecast::Point(p)
        }
        Forecast::Distribution(d) => {
            if d.horizon() == horizon {
                return Ok(Forecast::Distribution(d));
            }
            let repr = match d.representation().clone() {
                Representation::SamplePaths(mut paths) => {
                    paths.iter_mut().for_each(|p| p.truncate(horizon));
                    Representation::SamplePaths(paths)
                }
                Representation::Gaussian(mut g) => {
                    g.truncate(horizon);
                    Representation::Gaussian(g)
                }
                Representation::Degenerate(mut v) => {
                    v.truncate(horizon);
                    Representation::Degenerate(v)
                }
            };
            Forecast::Distribution(ForecastDistribution::new(d.start, d.step_seconds, repr)?)
        }
    })
}

/// Train a forecaster of `config.kind` on `train`.
pub fn train(train: &TimeSeries, config: &ModelConfig) -> Result<TrainedModel> {
    config.validate()?;
    match config.kind {
        ModelKind::SeasonalNaive => seasonal_naive::fit_seasonal_naive(train, config),
        ModelKind::Lstm => train_lstm(train, config),
        ModelKind::Sff => train_sff(train, config),
        ModelKind::Deepar => train_deepar(train, config),
        ModelKind::Transformer => train_transformer(train, config),
    }
}

/// Shared context handling: the last `context_length` samples plus the scale.
pub(crate) fn prepare_context(model: &TrainedModel, context: &TimeSeries) -> Result<(TimeSeries, f64)> {
    let n = model.config.context_length;
    if context.len() < n {
        return Err(Error::sizing("forecast context", n, context.len()));
    }
    let ctx = context.tail(n)?;
    let scale = crate::series::mean_scale(ctx.values())?;
    Ok((ctx, scale))
}

/// Calendar features of the `horizon` steps following `context`.
pub(crate) fn future_features(context: &TimeSeries, horizon: usize) -> Vec<[f64; crate::series::NUM_TIME_FEATURES]> {
    (0..horizon)
        .map(|j| context.time_features(context.len() + j))
        .collect()
}
