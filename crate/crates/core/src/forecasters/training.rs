use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use super::layers::{Store, Tp};
use super::ModelConfig;
use crate::autodiff::{adam_step, clip_global_norm, AdamConfig, AdamState, Tape, Var};
use crate::error::{Error, Result};
use crate::series::{TimeSeries, NUM_TIME_FEATURES};

/// Global L2 norm bound applied to gradients before every optimizer step.
pub const GRAD_CLIP_NORM: f64 = 10.0;

/// Separates the window-sampling stream from the weight-init stream.
const WINDOW_STREAM_SALT: u64 = 0x5e_ed0f_d47a;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Mean training loss of the last epoch (`None` for untrained baselines).
    pub final_loss: Option<f64>,
    /// Mean loss per epoch.
    pub loss_history: Vec<f64>,
    pub train_length: usize,
}

/// Scaled-free view of a training series with precomputed calendar features.
pub(crate) struct TrainData {
    pub values: Vec<f64>,
    pub features: Vec<[f64; NUM_TIME_FEATURES]>,
}

impl TrainData {
    pub fn new(series: &TimeSeries) -> Self {
        Self {
            values: series.values().to_vec(),
            features: (0..series.len()).map(|i| series.time_features(i)).collect(),
        }
    }
}

pub(crate) fn ensure_length(what: &str, train: &TimeSeries, config: &ModelConfig) -> Result<()> {
    let required = config.context_length + config.horizon;
    if train.len() < required {
        return Err(Error::sizing(format!("{what} training data"), required, train.len()));
    }
    Ok(())
}

/// Minibatch Adam over random fixed-length windows of `data_len` samples.
///
/// `batch_loss` receives the window start indices of one batch and must
/// return a scalar loss node.
pub(crate) fn fit<F>(
    store: &mut Store,
    config: &ModelConfig,
    window_len: usize,
    data_len: usize,
    mut batch_loss: F,
) -> Result<TrainingSummary>
where
    F: FnMut(&mut Tp, &Store, &[usize]) -> Result<Var>,
{
    if data_len < window_len {
        return Err(Error::sizing("training windows", window_len, data_len));
    }
    let max_start = data_len - window_len;
    let mut rng = Pcg64::seed_from_u64(config.seed ^ WINDOW_STREAM_SALT);
    let mut adam = AdamState::new(
        store,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        for _ in 0..config.batches_per_epoch {
            let starts: Vec<usize> = (0..config.batch_size)
                .map(|_| rng.random_range(0..=max_start))
                .collect();
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, store, &starts).map_err(|e| match e {
                Error::Numeric { .. } => Error::NonFiniteLoss { epoch },
                other => other,
            })?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let mut grads = tape.backward(loss)?.for_params(store);
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            clip_global_norm(&mut grads, GRAD_CLIP_NORM);
            adam_step(store, &grads, &mut adam)?;
            total += value;
        }
        history.push(total / config.batches_per_epoch as f64);
    }
    Ok(TrainingSummary {
        final_loss: history.last().copied(),
        loss_history: history,
        train_length: data_len,
    })
}
