//! Finite-difference checks of each network's full training loss on a
//! tiny, frozen configuration.

use chrono::{TimeZone, Utc};

use super::layers::Store;
use super::training::TrainData;
use super::{deepar, init_rng, lstm, sff, transformer, ModelConfig, ModelKind};
use crate::autodiff::grad_check_params;
use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Configuration of the 2-step miniature of `kind`.
pub fn miniature_config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        // deepar conditions from one season into the window
        context_length: if kind == ModelKind::Deepar { 3 } else { 2 },
        horizon: 2,
        hidden_size: 3,
        num_layers: 2,
        epochs: 1,
        batches_per_epoch: 1,
        batch_size: 2,
        num_sample_paths: 2,
        season_length: 2,
        num_heads: 2,
        model_dim: 4,
        seed: 17,
        ..ModelConfig::default()
    }
}

/// Largest relative error between the reverse-mode gradient of the batch
/// loss and central differences, over every weight of the miniature.
pub fn miniature_gradient_error(kind: ModelKind) -> Result<f64> {
    let config = miniature_config(kind);
    let start = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let values = (0..8).map(|i| 60.0 + 25.0 * (i as f64 * 0.9).sin()).collect();
    let series = TimeSeries::new("mini", start, 900, values, 273.0)?;
    let data = TrainData::new(&series);
    let starts = [0, 3];
    let mut store = Store::new();
    let mut rng = init_rng(&config);
    let eps = 1e-5;
    match kind {
        ModelKind::SeasonalNaive => Err(Error::config("kind", "seasonal-naive has no parameters")),
        ModelKind::Lstm => {
            let net = lstm::LstmNet::build(&config, &mut store, &mut rng);
            grad_check_params(&store, eps, |t, s| net.batch_loss(t, s, &data, &config, &starts))
        }
        ModelKind::Sff => {
            let net = sff::SffNet::build(&config, &mut store, &mut rng);
            grad_check_params(&store, eps, |t, s| net.batch_loss(t, s, &data, &config, &starts))
        }
        ModelKind::Deepar => {
            let net = deepar::DeepArNet::build(&config, &mut store, &mut rng);
            grad_check_params(&store, eps, |t, s| net.batch_loss(t, s, &data, &config, &starts))
        }
        ModelKind::Transformer => {
            let net = transformer::TransformerNet::build(&config, &mut store, &mut rng);
            grad_check_params(&store, eps, |t, s| net.batch_loss(t, s, &data, &config, &starts))
        }
    }
}
