use super::tape::{Tape, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compare reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` builds the function on a fresh tape from one variable per entry of
/// `inputs`. Returns `max |analytic − numeric| / max(1e-8, |analytic| + |numeric|)`
/// over every input coordinate.
pub fn grad_check<T, F>(inputs: &[Tensor<T>], eps: T, f: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|v| tape.variable(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::Contract("grad_check needs a scalar-valued function".into()));
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|v| tape.variable(v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let floor = T::lit(1e-8);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (two * eps);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Gradient magnitude below which [`grad_check_params`] measures error
/// against this floor instead of the gradient itself. Deep recurrent
/// weights reach ~1e-7 through products of gates, where central differences
/// carry ~1e-11 of roundoff.
pub const PARAM_GRAD_FLOOR: f64 = 1e-6;

/// [`grad_check`] over every scalar of a parameter store, for functions
/// that read their weights through [`Tape::param`].
pub fn grad_check_params<T, F>(store: &ParamStore<T>, eps: T, f: F) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    let eval = |s: &ParamStore<T>| -> Result<T> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        if !tape.value(out).is_scalar() {
            return Err(Error::Contract("grad_check needs a scalar-valued function".into()));
        }
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let analytic = tape.backward(out)?.for_params(store);

    let floor = T::lit(PARAM_GRAD_FLOOR);
    let two = T::lit(2.0);
    let mut worst = T::zero();
    let mut work = store.clone();
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        for j in 0..grad.len() {
            let x0 = store.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = x0 + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = x0 - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = x0;
            let numeric = (plus - minus) / (two * eps);
            let a = grad.data()[j];
            let r = (a - numeric).abs() / floor.max(a.abs() + numeric.abs());
            worst = worst.max(r);
        }
    }
    Ok(worst)
}
