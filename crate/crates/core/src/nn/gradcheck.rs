//! Central-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

/// Gradients smaller than this are compared absolutely rather than
/// relatively, so roundoff on near-zero entries does not dominate.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("function value {value} is not finite")));
    }
    Ok(value)
}

/// Maximum relative error between the tape gradient of `f` at `x` and
/// central differences with step `epsilon`, over every element of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::param("finite difference step must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let up = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let down = eval_scalar(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.data()[i], numeric, RELATIVE_FLOOR));
    }
    Ok(worst)
}

/// Like [`finite_diff_check`] but perturbs entries of named parameters in
/// `store`. `indices` picks which flat entries of each parameter to probe
/// (`None` probes all of them).
pub fn finite_diff_check_params<F>(
    store: &mut ParamStore,
    names: &[&str],
    indices: Option<&[usize]>,
    epsilon: f64,
    floor: f64,
    f: F,
) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if epsilon <= 0.0 {
        return Err(Error::param("finite difference step must be positive"));
    }
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    store.zero_grad();
    store.accumulate_grads(&tape, &grads);

    let value_of = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("function value {v} is not finite")));
        }
        Ok(v)
    };

    let mut worst = 0.0_f64;
    for name in names {
        let numel = store.get(name)?.value.numel();
        let all: Vec<usize>;
        let picks = match indices {
            Some(ix) => ix,
            None => {
                all = (0..numel).collect();
                &all
            }
        };
        for &i in picks.iter().filter(|&&i| i < numel) {
            let analytic = store.get(name)?.grad.data()[i];
            let orig = store.get(name)?.value.data()[i];
            store.get_mut(name)?.value.data_mut()[i] = orig + epsilon;
            let up = value_of(store)?;
            store.get_mut(name)?.value.data_mut()[i] = orig - epsilon;
            let down = value_of(store)?;
            store.get_mut(name)?.value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic, numeric, floor));
        }
    }
    store.zero_grad();
    Ok(worst)
}
