//! Network building blocks shared by the neural forecasters.

use rand::Rng;

use super::distribution::SIGMA_FLOOR;
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) type Store = ParamStore<f64>;
pub(crate) type Tp = Tape<f64>;

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut Store, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng);
        Self { w, b }
    }

    /// `x·W + b` over the last axis of `x`.
    pub fn forward(&self, tape: &mut Tp, store: &Store, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

/// One LSTM layer; gates are packed as `[input, forget, cell, output]`.
#[derive(Clone, Debug)]
pub(crate) struct LstmCell {
    w: ParamId,
    b: ParamId,
    hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut Store, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = input + hidden;
        let w = store.add_uniform(format!("{name}.weight"), &[fan_in, 4 * hidden], fan_in, rng);
        let mut bias = vec![0.0; 4 * hidden];
        // forget-gate bias of 1 keeps early gradients flowing through time
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.bias"), Tensor::vector(bias));
        Self { w, b, hidden }
    }

    pub fn step(&self, tape: &mut Tp, store: &Store, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        let xh = tape.concat(&[x, h], 1)?;
        let z = tape.matmul(xh, w)?;
        let z = tape.add(z, b)?;
        let n = self.hidden;
        let i = tape.slice(z, 1, 0, n)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(z, 1, n, n)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(z, 1, 2 * n, n)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(z, 1, 3 * n, n)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next)?;
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

/// `(h, c)` per layer.
pub(crate) type LstmState = Vec<(Var, Var)>;

#[derive(Clone, Debug)]
pub(crate) struct LstmStack {
    cells: Vec<LstmCell>,
    hidden: usize,
}

impl LstmStack {
    pub fn new<R: Rng>(
        store: &mut Store,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| {
                let fan = if l == 0 { input } else { hidden };
                LstmCell::new(store, &format!("{name}.{l}"), fan, hidden, rng)
            })
            .collect();
        Self { cells, hidden }
    }

    pub fn zero_state(&self, tape: &mut Tp, batch: usize) -> Result<LstmState> {
        self.cells
            .iter()
            .map(|_| {
                let h = tape.constant(Tensor::zeros(&[batch, self.hidden]))?;
                let c = tape.constant(Tensor::zeros(&[batch, self.hidden]))?;
                Ok((h, c))
            })
            .collect()
    }

    /// Re-enter a state produced on another tape.
    pub fn import_state(&self, tape: &mut Tp, state: &[(Tensor<f64>, Tensor<f64>)]) -> Result<LstmState> {
        state
            .iter()
            .map(|(h, c)| Ok((tape.constant(h.clone())?, tape.constant(c.clone())?)))
            .collect()
    }

    pub fn export_state(&self, tape: &Tp, state: &LstmState) -> Vec<(Tensor<f64>, Tensor<f64>)> {
        state
            .iter()
            .map(|&(h, c)| (tape.value(h).clone(), tape.value(c).clone()))
            .collect()
    }

    /// Advance every layer by one time step; returns the top hidden state.
    pub fn step(&self, tape: &mut Tp, store: &Store, x: Var, state: &mut LstmState) -> Result<Var> {
        let mut input = x;
        for (cell, (h, c)) in self.cells.iter().zip(state.iter_mut()) {
            let (h2, c2) = cell.step(tape, store, input, *h, *c)?;
            *h = h2;
            *c = c2;
            input = h2;
        }
        Ok(input)
    }
}

/// Maps features to `(μ, σ)` with σ = softplus(·) + floor.
#[derive(Clone, Debug)]
pub(crate) struct GaussianHead {
    proj: Linear,
}

impl GaussianHead {
    pub fn new<R: Rng>(store: &mut Store, name: &str, input: usize, rng: &mut R) -> Self {
        Self {
            proj: Linear::new(store, name, input, 2, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tp, store: &Store, x: Var) -> Result<(Var, Var)> {
        let out = self.proj.forward(tape, store, x)?;
        let axis = tape.shape(out).len() - 1;
        let mu = tape.slice(out, axis, 0, 1)?;
        let raw = tape.slice(out, axis, 1, 1)?;
        let sigma = positive_scale(tape, raw)?;
        Ok((mu, sigma))
    }
}

pub(crate) fn positive_scale(tape: &mut Tp, raw: Var) -> Result<Var> {
    let s = tape.softplus(raw)?;
    tape.add_scalar(s, SIGMA_FLOOR)
}

/// Mean Gaussian negative log-likelihood of `target` under `(mu, sigma)`.
pub(crate) fn gaussian_nll_mean(tape: &mut Tp, mu: Var, sigma: Var, target: Var) -> Result<Var> {
    let d = tape.sub(target, mu)?;
    let r = tape.div(d, sigma)?;
    let r2 = tape.square(r)?;
    let half = tape.scale(r2, 0.5)?;
    let log_sigma = tape.log(sigma)?;
    let per_point = tape.add(log_sigma, half)?;
    let per_point = tape.add_scalar(per_point, 0.5 * std::f64::consts::TAU.ln())?;
    tape.mean(per_point)
}

pub(crate) fn mse_mean(tape: &mut Tp, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let d2 = tape.square(d)?;
    tape.mean(d2)
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut Store, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_full(format!("{name}.gain"), &[dim], 1.0),
            bias: store.add_full(format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tp, store: &Store, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, 1e-5)?;
        let g = tape.param(store, self.gain)?;
        let b = tape.param(store, self.bias)?;
        let y = tape.mul(n, g)?;
        tape.add(y, b)
    }
}

/// Scaled dot-product attention with `heads` heads over `[B, T, D]` inputs.
#[derive(Clone, Debug)]
pub(crate) struct MultiHeadAttention {
    name: String,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut Store, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            name: name.to_string(),
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// Returns the attended output and the per-head weight matrices
    /// `[B, Tq, Tk]`.
    pub fn forward(&self, tape: &mut Tp, store: &Store, query: Var, memory: Var) -> Result<(Var, Vec<Var>)> {
        let (qs, ks) = (tape.shape(query).to_vec(), tape.shape(memory).to_vec());
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.dim || ks[2] != self.dim {
            return Err(Error::shape(format!("attention `{}`", self.name), &qs, &ks));
        }
        let head_dim = self.dim / self.heads;
        let q = self.q.forward(tape, store, query)?;
        let k = self.k.forward(tape, store, memory)?;
        let v = self.v.forward(tape, store, memory)?;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(q, 2, h * head_dim, head_dim)?;
            let kh = tape.slice(k, 2, h * head_dim, head_dim)?;
            let vh = tape.slice(v, 2, h * head_dim, head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let w = tape.softmax(scores)?;
            outputs.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = tape.concat(&outputs, 2)?;
        Ok((self.o.forward(tape, store, joined)?, weights))
    }
}

/// Position-wise two-layer ReLU network.
#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut Store, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tp, store: &Store, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.down.forward(tape, store, h)
    }
}
