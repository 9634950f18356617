//! Direct multi-step LSTM point baseline.

use rand::Rng;

use super::distribution::PointForecast;
use super::layers::{mse_mean, LstmStack, Linear, Store, Tp};
use super::training::{ensure_length, fit, TrainData};
use super::{init_rng, prepare_context, ModelConfig, ModelKind, TrainedModel};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::series::{mean_scale, TimeSeries};

pub(crate) struct LstmNet {
    rnn: LstmStack,
    head: Linear,
}

impl LstmNet {
    pub fn build<R: Rng>(config: &ModelConfig, store: &mut Store, rng: &mut R) -> Self {
        let rnn = LstmStack::new(store, "lstm", 1, config.hidden_size, config.num_layers, rng);
        let head = Linear::new(store, "head", config.hidden_size, config.horizon, rng);
        Self { rnn, head }
    }

    fn rebuild(config: &ModelConfig) -> Self {
        Self::build(config, &mut Store::new(), &mut init_rng(config))
    }

    /// `contexts` are already scaled, all of equal length; returns `[B, H]`.
    pub fn forward(&self, tape: &mut Tp, store: &Store, contexts: &[Vec<f64>]) -> Result<Var> {
        let batch = contexts.len();
        let mut state = self.rnn.zero_state(tape, batch)?;
        let mut top = state.last().expect("at least one layer").0;
        for t in 0..contexts[0].len() {
            let x = Tensor::new(vec![batch, 1], contexts.iter().map(|c| c[t]).collect())?;
            let x = tape.constant(x)?;
            top = self.rnn.step(tape, store, x, &mut state)?;
        }
        self.head.forward(tape, store, top)
    }

    /// MSE on the scaled horizon of the windows starting at `starts`.
    pub fn batch_loss(&self, tape: &mut Tp, store: &Store, data: &TrainData, config: &ModelConfig, starts: &[usize]) -> Result<Var> {
        let (c, h) = (config.context_length, config.horizon);
        let mut contexts = Vec::with_capacity(starts.len());
        let mut targets = Vec::with_capacity(starts.len() * h);
        for &s in starts {
            let ctx = &data.values[s..s + c];
            let nu = mean_scale(ctx)?;
            contexts.push(ctx.iter().map(|v| v / nu).collect::<Vec<_>>());
            targets.extend(data.values[s + c..s + c + h].iter().map(|v| v / nu));
        }
        let pred = self.forward(tape, store, &contexts)?;
        let target = tape.constant(Tensor::new(vec![starts.len(), h], targets)?)?;
        mse_mean(tape, pred, target)
    }
}

pub fn train_lstm(train: &TimeSeries, config: &ModelConfig) -> Result<TrainedModel> {
    config.expect_kind(ModelKind::Lstm)?;
    ensure_length("lstm", train, config)?;
    let mut store = Store::new();
    let net = LstmNet::build(config, &mut store, &mut init_rng(config));
    let data = TrainData::new(train);
    let (c, h) = (config.context_length, config.horizon);
    let summary = fit(&mut store, config, c + h, data.values.len(), |tape, store, starts| {
        net.batch_loss(tape, store, &data, config, starts)
    })?;
    Ok(TrainedModel::from_parts(config.clone(), store, summary))
}

pub fn predict_lstm(model: &TrainedModel, context: &TimeSeries) -> Result<PointForecast> {
    model.config().expect_kind(ModelKind::Lstm)?;
    let (ctx, nu) = prepare_context(model, context)?;
    let net = LstmNet::rebuild(model.config());
    let mut tape = Tape::new();
    let scaled = vec![ctx.values().iter().map(|v| v / nu).collect()];
    let out = net.forward(&mut tape, model.params(), &scaled)?;
    Ok(PointForecast {
        start: context.end(),
        step_seconds: context.step_seconds(),
        values: tape.value(out).data().iter().map(|v| v * nu).collect(),
    })
}
