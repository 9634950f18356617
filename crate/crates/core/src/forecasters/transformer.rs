//! Minimal encoder-decoder Transformer: one encoder layer over the context,
//! one decoder layer over the future calendar, a Gaussian head per step.

use rand::Rng;

use super::distribution::{ForecastDistribution, GaussianParams, Representation};
use super::layers::{gaussian_nll_mean, FeedForward, GaussianHead, LayerNorm, Linear, MultiHeadAttention, Store, Tp};
use super::training::{ensure_length, fit, TrainData};
use super::{future_features, init_rng, prepare_context, ModelConfig, ModelKind, TrainedModel};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::series::{mean_scale, TimeSeries, NUM_TIME_FEATURES};

/// Width of one encoder token: scaled value plus calendar features.
pub const ENCODER_INPUT_DIM: usize = 1 + NUM_TIME_FEATURES;

/// Sinusoidal positional encoding rows for `positions`, width `dim`.
fn positional_encoding(positions: std::ops::Range<usize>, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len() * dim);
    for pos in positions {
        for i in 0..dim {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            out.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

struct Sublayer {
    norm: LayerNorm,
}

impl Sublayer {
    fn new(store: &mut Store, name: &str, dim: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
        }
    }

    /// Post-norm residual: `LN(x + f(x))`.
    fn close(&self, tape: &mut Tp, store: &Store, x: Var, fx: Var) -> Result<Var> {
        let y = tape.add(x, fx)?;
        self.norm.forward(tape, store, y)
    }
}

pub(crate) struct TransformerNet {
    enc_embed: Linear,
    dec_embed: Linear,
    enc_attn: MultiHeadAttention,
    enc_attn_norm: Sublayer,
    enc_ffn: FeedForward,
    enc_ffn_norm: Sublayer,
    dec_attn: MultiHeadAttention,
    dec_attn_norm: Sublayer,
    cross_attn: MultiHeadAttention,
    cross_norm: Sublayer,
    dec_ffn: FeedForward,
    dec_ffn_norm: Sublayer,
    head: GaussianHead,
    dim: usize,
    context_length: usize,
}

/// Intermediate values of one forward pass, in model (scaled) units.
#[derive(Clone, Debug)]
pub struct TransformerDiagnostics {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Per-head `[1, C, C]` encoder self-attention weights.
    pub encoder_attention: Vec<Tensor<f64>>,
    /// Per-head `[1, H, H]` decoder self-attention weights.
    pub decoder_attention: Vec<Tensor<f64>>,
    /// Per-head `[1, H, C]` encoder-decoder attention weights.
    pub cross_attention: Vec<Tensor<f64>>,
}

struct Pass {
    mu: Var,
    sigma: Var,
    enc: Vec<Var>,
    dec: Vec<Var>,
    cross: Vec<Var>,
}

impl TransformerNet {
    pub fn build<R: Rng>(config: &ModelConfig, store: &mut Store, rng: &mut R) -> Self {
        let (d, heads, ff) = (config.model_dim, config.num_heads, config.hidden_size);
        Self {
            enc_embed: Linear::new(store, "enc.embed", ENCODER_INPUT_DIM, d, rng),
            dec_embed: Linear::new(store, "dec.embed", NUM_TIME_FEATURES, d, rng),
            enc_attn: MultiHeadAttention::new(store, "enc.self_attn", d, heads, rng),
            enc_attn_norm: Sublayer::new(store, "enc.self_attn", d),
            enc_ffn: FeedForward::new(store, "enc.ffn", d, ff, rng),
            enc_ffn_norm: Sublayer::new(store, "enc.ffn", d),
            dec_attn: MultiHeadAttention::new(store, "dec.self_attn", d, heads, rng),
            dec_attn_norm: Sublayer::new(store, "dec.self_attn", d),
            cross_attn: MultiHeadAttention::new(store, "dec.cross_attn", d, heads, rng),
            cross_norm: Sublayer::new(store, "dec.cross_attn", d),
            dec_ffn: FeedForward::new(store, "dec.ffn", d, ff, rng),
            dec_ffn_norm: Sublayer::new(store, "dec.ffn", d),
            head: GaussianHead::new(store, "head", d, rng),
            dim: d,
            context_length: config.context_length,
        }
    }

    /// `enc_in` is `[B, C, 5]`, `dec_in` is `[B, H, 4]`.
    fn forward(&self, tape: &mut Tp, store: &Store, enc_in: Var, dec_in: Var, positional: bool) -> Result<Pass> {
        let (b, c) = (tape.shape(enc_in)[0], tape.shape(enc_in)[1]);
        let h = tape.shape(dec_in)[1];
        let mut x = self.enc_embed.forward(tape, store, enc_in)?;
        let mut y = self.dec_embed.forward(tape, store, dec_in)?;
        if positional {
            let pe = tape.constant(Tensor::new(vec![c, self.dim], positional_encoding(0..c, self.dim))?)?;
            x = tape.add(x, pe)?;
            let pe = tape.constant(Tensor::new(
                vec![h, self.dim],
                positional_encoding(self.context_length..self.context_length + h, self.dim),
            )?)?;
            y = tape.add(y, pe)?;
        }

        let (a, enc) = self.enc_attn.forward(tape, store, x, x)?;
        let x = self.enc_attn_norm.close(tape, store, x, a)?;
        let f = self.enc_ffn.forward(tape, store, x)?;
        let memory = self.enc_ffn_norm.close(tape, store, x, f)?;

        let (a, dec) = self.dec_attn.forward(tape, store, y, y)?;
        let y = self.dec_attn_norm.close(tape, store, y, a)?;
        let (a, cross) = self.cross_attn.forward(tape, store, y, memory)?;
        let y = self.cross_norm.close(tape, store, y, a)?;
        let f = self.dec_ffn.forward(tape, store, y)?;
        let y = self.dec_ffn_norm.close(tape, store, y, f)?;

        let (mu, sigma) = self.head.forward(tape, store, y)?;
        Ok(Pass {
            mu: tape.reshape(mu, &[b, h])?,
            sigma: tape.reshape(sigma, &[b, h])?,
            enc,
            dec,
            cross,
        })
    }

    /// Gaussian NLL on the scaled horizon of the windows starting at `starts`.
    pub fn batch_loss(&self, tape: &mut Tp, store: &Store, data: &TrainData, config: &ModelConfig, starts: &[usize]) -> Result<Var> {
        let (c, h) = (config.context_length, config.horizon);
        let b = starts.len();
        let mut enc = Vec::with_capacity(b * c * ENCODER_INPUT_DIM);
        let mut dec = Vec::with_capacity(b * h * NUM_TIME_FEATURES);
        let mut targets = Vec::with_capacity(b * h);
        for &s in starts {
            let ctx = &data.values[s..s + c];
            let nu = mean_scale(ctx)?;
            let scaled: Vec<f64> = ctx.iter().map(|v| v / nu).collect();
            encoder_tokens(&scaled, &data.features[s..s + c], &mut enc);
            dec.extend(data.features[s + c..s + c + h].iter().flatten());
            targets.extend(data.values[s + c..s + c + h].iter().map(|v| v / nu));
        }
        let enc = tape.constant(Tensor::new(vec![b, c, ENCODER_INPUT_DIM], enc)?)?;
        let dec = tape.constant(Tensor::new(vec![b, h, NUM_TIME_FEATURES], dec)?)?;
        let pass = self.forward(tape, store, enc, dec, true)?;
        let target = tape.constant(Tensor::new(vec![b, h], targets)?)?;
        gaussian_nll_mean(tape, pass.mu, pass.sigma, target)
    }
}

fn encoder_tokens(scaled: &[f64], features: &[[f64; NUM_TIME_FEATURES]], out: &mut Vec<f64>) {
    for (z, f) in scaled.iter().zip(features) {
        out.push(*z);
        out.extend_from_slice(f);
    }
}

pub fn train_transformer(train: &TimeSeries, config: &ModelConfig) -> Result<TrainedModel> {
    config.expect_kind(ModelKind::Transformer)?;
    ensure_length("transformer", train, config)?;
    let mut store = Store::new();
    let net = TransformerNet::build(config, &mut store, &mut init_rng(config));
    let data = TrainData::new(train);
    let (c, h) = (config.context_length, config.horizon);
    let summary = fit(&mut store, config, c + h, data.values.len(), |tape, store, starts| {
        net.batch_loss(tape, store, &data, config, starts)
    })?;
    Ok(TrainedModel::from_parts(config.clone(), store, summary))
}

pub fn predict_transformer(model: &TrainedModel, context: &TimeSeries) -> Result<ForecastDistribution> {
    model.config().expect_kind(ModelKind::Transformer)?;
    let (ctx, nu) = prepare_context(model, context)?;
    let scaled: Vec<f64> = ctx.values().iter().map(|v| v / nu).collect();
    let feats: Vec<_> = (0..ctx.len()).map(|i| ctx.time_features(i)).collect();
    let mut enc = Vec::new();
    encoder_tokens(&scaled, &feats, &mut enc);
    let dec = future_features(&ctx, model.config().horizon);
    let diag = transformer_diagnostics(model, &enc, &dec, true)?;
    let params = diag
        .mu
        .iter()
        .zip(&diag.sigma)
        .map(|(&m, &s)| GaussianParams::new(m * nu, s * nu))
        .collect::<Result<Vec<_>>>()?;
    ForecastDistribution::new(context.end(), context.step_seconds(), Representation::Gaussian(params))
}

/// Run one forward pass on explicit, already scaled tokens.
///
/// `encoder_inputs` is row-major `[C, 5]` (value then calendar features).
/// With `positional == false` the encodings are zeroed, which makes the
/// output invariant to any permutation of the encoder rows.
pub fn transformer_diagnostics(
    model: &TrainedModel,
    encoder_inputs: &[f64],
    decoder_features: &[[f64; NUM_TIME_FEATURES]],
    positional: bool,
) -> Result<TransformerDiagnostics> {
    model.config().expect_kind(ModelKind::Transformer)?;
    let c = model.config().context_length;
    if encoder_inputs.len() != c * ENCODER_INPUT_DIM {
        return Err(Error::sizing("transformer encoder inputs", c * ENCODER_INPUT_DIM, encoder_inputs.len()));
    }
    let h = decoder_features.len();
    let net = TransformerNet::build(model.config(), &mut Store::new(), &mut init_rng(model.config()));
    let mut tape = Tape::new();
    let enc = tape.constant(Tensor::new(vec![1, c, ENCODER_INPUT_DIM], encoder_inputs.to_vec())?)?;
    let dec = tape.constant(Tensor::new(
        vec![1, h, NUM_TIME_FEATURES],
        decoder_features.iter().flatten().copied().collect(),
    )?)?;
    let pass = net.forward(&mut tape, model.params(), enc, dec, positional)?;
    let grab = |vars: &[Var]| vars.iter().map(|&v| tape.value(v).clone()).collect();
    Ok(TransformerDiagnostics {
        mu: tape.value(pass.mu).data().to_vec(),
        sigma: tape.value(pass.sigma).data().to_vec(),
        encoder_attention: grab(&pass.enc),
        decoder_attention: grab(&pass.dec),
        cross_attention: grab(&pass.cross),
    })
}
