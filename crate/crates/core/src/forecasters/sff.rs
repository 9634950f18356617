//! Simple feed-forward probabilistic forecaster: an MLP over the scaled
//! context emitting a Gaussian per future step.

use rand::Rng;

use super::distribution::{ForecastDistribution, GaussianParams, Representation};
use super::layers::{gaussian_nll_mean, positive_scale, Linear, Store, Tp};
use super::training::{ensure_length, fit, TrainData};
use super::{init_rng, prepare_context, ModelConfig, ModelKind, TrainedModel};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::series::{mean_scale, TimeSeries};

pub(crate) struct SffNet {
    hidden: Vec<Linear>,
    out: Linear,
    horizon: usize,
}

impl SffNet {
    pub fn build<R: Rng>(config: &ModelConfig, store: &mut Store, rng: &mut R) -> Self {
        let mut fan_in = config.context_length;
        let hidden = (0..config.num_layers)
            .map(|l| {
                let layer = Linear::new(store, &format!("mlp.{l}"), fan_in, config.hidden_size, rng);
                fan_in = config.hidden_size;
                layer
            })
            .collect();
        let out = Linear::new(store, "out", fan_in, 2 * config.horizon, rng);
        Self {
            hidden,
            out,
            horizon: config.horizon,
        }
    }

    /// `x` is `[B, C]` scaled context; returns `(mu, sigma)`, each `[B, H]`.
    pub fn forward(&self, tape: &mut Tp, store: &Store, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.forward(tape, store, h)?;
            h = tape.tanh(z)?;
        }
        let out = self.out.forward(tape, store, h)?;
        let mu = tape.slice(out, 1, 0, self.horizon)?;
        let raw = tape.slice(out, 1, self.horizon, self.horizon)?;
        Ok((mu, positive_scale(tape, raw)?))
    }

    /// Gaussian NLL on the scaled horizon of the windows starting at `starts`.
    pub fn batch_loss(&self, tape: &mut Tp, store: &Store, data: &TrainData, config: &ModelConfig, starts: &[usize]) -> Result<Var> {
        let (c, h) = (config.context_length, config.horizon);
        let b = starts.len();
        let mut inputs = Vec::with_capacity(b * c);
        let mut targets = Vec::with_capacity(b * h);
        for &s in starts {
            let ctx = &data.values[s..s + c];
            let nu = mean_scale(ctx)?;
            inputs.extend(ctx.iter().map(|v| v / nu));
            targets.extend(data.values[s + c..s + c + h].iter().map(|v| v / nu));
        }
        let x = tape.constant(Tensor::new(vec![b, c], inputs)?)?;
        let (mu, sigma) = self.forward(tape, store, x)?;
        let target = tape.constant(Tensor::new(vec![b, h], targets)?)?;
        gaussian_nll_mean(tape, mu, sigma, target)
    }
}

pub fn train_sff(train: &TimeSeries, config: &ModelConfig) -> Result<TrainedModel> {
    config.expect_kind(ModelKind::Sff)?;
    ensure_length("sff", train, config)?;
    let mut store = Store::new();
    let net = SffNet::build(config, &mut store, &mut init_rng(config));
    let data = TrainData::new(train);
    let (c, h) = (config.context_length, config.horizon);
    let summary = fit(&mut store, config, c + h, data.values.len(), |tape, store, starts| {
        net.batch_loss(tape, store, &data, config, starts)
    })?;
    Ok(TrainedModel::from_parts(config.clone(), store, summary))
}

pub fn predict_sff(model: &TrainedModel, context: &TimeSeries) -> Result<ForecastDistribution> {
    model.config().expect_kind(ModelKind::Sff)?;
    let (ctx, nu) = prepare_context(model, context)?;
    let net = SffNet::build(model.config(), &mut Store::new(), &mut init_rng(model.config()));
    let mut tape = Tape::new();
    let c = ctx.len();
    let x = tape.constant(Tensor::new(vec![1, c], ctx.values().iter().map(|v| v / nu).collect())?)?;
    let (mu, sigma) = net.forward(&mut tape, model.params(), x)?;
    let params = tape
        .value(mu)
        .data()
        .iter()
        .zip(tape.value(sigma).data())
        .map(|(&m, &s)| GaussianParams::new(m * nu, s * nu))
        .collect::<Result<Vec<_>>>()?;
    ForecastDistribution::new(context.end(), context.step_seconds(), Representation::Gaussian(params))
}
