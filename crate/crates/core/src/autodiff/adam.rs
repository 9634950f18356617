use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter in `store`.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(Error::shape(
            "adam_step",
            &[store.len()],
            &[grads.len(), state.first.len()],
        ));
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let lr = T::lit(c.learning_rate);
    let eps = T::lit(c.eps);
    let bias1 = T::one() - b1.powi(state.step as i32);
    let bias2 = T::one() - b2.powi(state.step as i32);
    for (((param, g), m), v) in store
        .values_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        if param.shape() != g.shape() || m.shape() != g.shape() {
            return Err(Error::shape("adam_step", param.shape(), g.shape()));
        }
        for (((p, &gi), mi), vi) in param
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<T>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = scalar_store(1.25);
        let mut state = AdamState::new(&store, AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut store, &[Tensor::scalar(0.0)], &mut state).unwrap();
        }
        assert_eq!(store.get(store.id("w").unwrap()).item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut state = AdamState::new(&store, cfg);
        adam_step(&mut store, &[Tensor::scalar(1.0)], &mut state).unwrap();
        // m̂ = v̂ = 1  ⇒  Δ = -0.1 / (1 + ε)
        let w = store.get(store.id("w").unwrap()).item();
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "{w}");
    }

    /// Straight transcription of the Adam recurrences on a scalar.
    fn reference_adam_quadratic(steps: usize, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn converges_on_quadratic_like_reference() {
        let mut store = scalar_store(0.0);
        let id = store.id("w").unwrap();
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut state = AdamState::new(&store, cfg);
        for _ in 0..100 {
            let w = store.get(id).item();
            adam_step(&mut store, &[Tensor::scalar(2.0 * (w - 3.0))], &mut state).unwrap();
        }
        let w = store.get(id).item();
        let reference = reference_adam_quadratic(100, 0.1);
        assert!((w - 3.0).abs() < 0.5, "w = {w}");
        assert!((w - reference).abs() < 1e-12);
        assert_eq!(state.step_count(), 100);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = scalar_store(0.0);
        let mut state = AdamState::new(&store, AdamConfig::default());
        assert!(adam_step(&mut store, &[Tensor::zeros(&[2])], &mut state).is_err());
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut g = vec![Tensor::vector(vec![30.0, 40.0]), Tensor::scalar(0.0)];
        let before = clip_global_norm(&mut g, 10.0);
        assert_eq!(before, 50.0);
        let after: f64 = g.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        assert!((after - 10.0).abs() < 1e-12);
    }
}
