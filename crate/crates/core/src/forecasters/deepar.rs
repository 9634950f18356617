//! Autoregressive LSTM emitting a Gaussian per step, sampled ancestrally.
//!
//! Each step sees the previous value, the value one season earlier and the
//! calendar features. The unroll starts one season into the window so the
//! seasonal lag is always defined; while the horizon fits in a season it
//! comes from observed data, which keeps long rollouts anchored.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

use super::distribution::{ForecastDistribution, Representation};
use super::layers::{gaussian_nll_mean, GaussianHead, LstmStack, Store, Tp};
use super::training::{ensure_length, fit, TrainData};
use super::{future_features, init_rng, prepare_context, ModelConfig, ModelKind, TrainedModel};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::series::{mean_scale, TimeSeries, NUM_TIME_FEATURES};

const INPUT_DIM: usize = 2 + NUM_TIME_FEATURES;

pub(crate) struct DeepArNet {
    rnn: LstmStack,
    head: GaussianHead,
}

impl DeepArNet {
    pub fn build<R: Rng>(config: &ModelConfig, store: &mut Store, rng: &mut R) -> Self {
        let rnn = LstmStack::new(store, "rnn", INPUT_DIM, config.hidden_size, config.num_layers, rng);
        let head = GaussianHead::new(store, "head", config.hidden_size, rng);
        Self { rnn, head }
    }

    /// Teacher-forced unroll. `scaled[b][t]` is the scaled target and
    /// `features[b][t]` its calendar features; returns `(mu, sigma)` for
    /// steps `lag..L`, each `[B, L-lag]`.
    fn unroll(
        &self,
        tape: &mut Tp,
        store: &Store,
        scaled: &[Vec<f64>],
        features: &[&[[f64; NUM_TIME_FEATURES]]],
        lag: usize,
    ) -> Result<(Var, Var)> {
        let batch = scaled.len();
        let len = scaled[0].len();
        let mut state = self.rnn.zero_state(tape, batch)?;
        let mut mus = Vec::with_capacity(len - lag);
        let mut sigmas = Vec::with_capacity(len - lag);
        for t in lag..len {
            let mut x = Vec::with_capacity(batch * INPUT_DIM);
            for (z, f) in scaled.iter().zip(features) {
                x.push(z[t - 1]);
                x.push(z[t - lag]);
                x.extend_from_slice(&f[t]);
            }
            let x = tape.constant(Tensor::new(vec![batch, INPUT_DIM], x)?)?;
            let h = self.rnn.step(tape, store, x, &mut state)?;
            let (mu, sigma) = self.head.forward(tape, store, h)?;
            mus.push(mu);
            sigmas.push(sigma);
        }
        Ok((tape.concat(&mus, 1)?, tape.concat(&sigmas, 1)?))
    }

    /// Mean per-step NLL over whole context+horizon windows.
    pub fn batch_loss(&self, tape: &mut Tp, store: &Store, data: &TrainData, config: &ModelConfig, starts: &[usize]) -> Result<Var> {
        let (c, len, lag) = (config.context_length, config.context_length + config.horizon, config.season_length);
        let mut scaled = Vec::with_capacity(starts.len());
        let mut features = Vec::with_capacity(starts.len());
        let mut targets = Vec::with_capacity(starts.len() * (len - lag));
        for &s in starts {
            let window = &data.values[s..s + len];
            let nu = mean_scale(&window[..c])?;
            let z: Vec<f64> = window.iter().map(|v| v / nu).collect();
            targets.extend_from_slice(&z[lag..]);
            scaled.push(z);
            features.push(&data.features[s..s + len]);
        }
        let (mu, sigma) = self.unroll(tape, store, &scaled, &features, lag)?;
        let target = tape.constant(Tensor::new(vec![starts.len(), len - lag], targets)?)?;
        gaussian_nll_mean(tape, mu, sigma, target)
    }
}

pub fn train_deepar(train: &TimeSeries, config: &ModelConfig) -> Result<TrainedModel> {
    config.expect_kind(ModelKind::Deepar)?;
    ensure_length("deepar", train, config)?;
    let mut store = Store::new();
    let net = DeepArNet::build(config, &mut store, &mut init_rng(config));
    let data = TrainData::new(train);
    let len = config.context_length + config.horizon;
    let summary = fit(&mut store, config, len, data.values.len(), |tape, store, starts| {
        net.batch_loss(tape, store, &data, config, starts)
    })?;
    Ok(TrainedModel::from_parts(config.clone(), store, summary))
}

/// Draw `paths` trajectories of length `horizon` following `context`.
pub fn deepar_sample_paths(
    model: &TrainedModel,
    context: &TimeSeries,
    horizon: usize,
    paths: usize,
    seed: u64,
) -> Result<ForecastDistribution> {
    model.config().expect_kind(ModelKind::Deepar)?;
    if model.summary().final_loss.is_none() {
        return Err(Error::State("deepar model has not been trained".into()));
    }
    if paths < 2 {
        return Err(Error::config("num_sample_paths", "must be at least 2"));
    }
    let (ctx, nu) = prepare_context(model, context)?;
    let lag = model.config().season_length;
    let store = model.params();
    let net = DeepArNet::build(model.config(), &mut Store::new(), &mut init_rng(model.config()));

    // Condition on the observed context once, with batch 1.
    let mut tape = Tape::new();
    let mut state = net.rnn.zero_state(&mut tape, 1)?;
    let observed: Vec<f64> = ctx.values().iter().map(|v| v / nu).collect();
    let n = observed.len();
    for t in lag..n {
        let mut x = vec![observed[t - 1], observed[t - lag]];
        x.extend_from_slice(&ctx.time_features(t));
        let x = tape.constant(Tensor::new(vec![1, INPUT_DIM], x)?)?;
        net.rnn.step(&mut tape, store, x, &mut state)?;
    }
    let mut carried: Vec<(Tensor<f64>, Tensor<f64>)> = net
        .rnn
        .export_state(&tape, &state)
        .into_iter()
        .map(|(h, c)| Ok((tile(&h, paths)?, tile(&c, paths)?)))
        .collect::<Result<_>>()?;

    let mut rng = Pcg64::seed_from_u64(seed);
    // scaled history per path: the shared context, then that path's draws
    let mut scaled: Vec<Vec<f64>> = vec![observed; paths];
    let mut out = vec![Vec::with_capacity(horizon); paths];
    for (j, feat) in future_features(&ctx, horizon).into_iter().enumerate() {
        let t = n + j;
        let mut tape = Tape::new();
        let mut state = net.rnn.import_state(&mut tape, &carried)?;
        let mut x = Vec::with_capacity(paths * INPUT_DIM);
        for z in &scaled {
            x.push(z[t - 1]);
            x.push(z[t - lag]);
            x.extend_from_slice(&feat);
        }
        let x = tape.constant(Tensor::new(vec![paths, INPUT_DIM], x)?)?;
        let h = net.rnn.step(&mut tape, store, x, &mut state)?;
        let (mu, sigma) = net.head.forward(&mut tape, store, h)?;
        let (mu, sigma) = (tape.value(mu).data(), tape.value(sigma).data());
        for i in 0..paths {
            let eps: f64 = rng.sample(StandardNormal);
            let draw = mu[i] + sigma[i] * eps;
            scaled[i].push(draw);
            out[i].push(draw * nu);
        }
        carried = net.rnn.export_state(&tape, &state);
    }
    ForecastDistribution::new(context.end(), context.step_seconds(), Representation::SamplePaths(out))
}

fn tile(row: &Tensor<f64>, times: usize) -> Result<Tensor<f64>> {
    let width = row.last_dim();
    Tensor::new(vec![times, width], row.data().repeat(times))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{generate_prb_trace, TraceGenConfig};

    #[test]
    fn first_sampled_step_matches_teacher_forced_head() {
        let s = generate_prb_trace(&TraceGenConfig { length: 400, ..TraceGenConfig::default() }).unwrap();
        let config = ModelConfig {
            context_length: 24,
            horizon: 6,
            season_length: 12,
            hidden_size: 8,
            num_layers: 2,
            epochs: 20,
            batch_size: 8,
            ..ModelConfig::new(ModelKind::Deepar)
        };
        let model = train_deepar(&s.slice(0..300).unwrap(), &config).unwrap();
        let ctx = s.slice(310..334).unwrap();
        let dist = deepar_sample_paths(&model, &ctx, 1, 2, 9).unwrap();
        let Representation::SamplePaths(paths) = dist.representation() else { panic!() };

        // the same normal draws the sampler consumed
        let mut rng = Pcg64::seed_from_u64(9);
        let (e0, e1): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let nu = mean_scale(ctx.values()).unwrap();
        let sigma = (paths[0][0] - paths[1][0]) / nu / (e0 - e1);
        let mu = paths[0][0] / nu - sigma * e0;

        // teacher-forced unroll over context plus one (unused) target
        let net = DeepArNet::build(&config, &mut Store::new(), &mut init_rng(&config));
        let mut scaled: Vec<f64> = ctx.values().iter().map(|v| v / nu).collect();
        scaled.push(0.0);
        let features: Vec<_> = (0..=ctx.len()).map(|i| ctx.time_features(i)).collect();
        let mut tape = Tape::new();
        let (m, sg) = net.unroll(&mut tape, model.params(), &[scaled], &[&features], config.season_length).unwrap();
        let (m, sg) = (*tape.value(m).data().last().unwrap(), *tape.value(sg).data().last().unwrap());
        assert!((m - mu).abs() < 1e-9, "{m} vs {mu}");
        assert!((sg - sigma).abs() < 1e-9, "{sg} vs {sigma}");
    }
}
