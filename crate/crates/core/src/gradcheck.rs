//! Finite-difference verification of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maximum over all input coordinates of
/// `|analytic − numeric| / max(1, |numeric|)`, using central differences.
///
/// `f` records a scalar-valued computation on a fresh tape from the bound
/// inputs and returns its output node.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(step > T::zero()) {
        return Err(Error::Parameter("finite-difference step must be positive".into()));
    }
    if inputs.iter().any(|t| !t.is_finite()) {
        return Err(Error::Parameter("grad_check inputs must be finite".into()));
    }
    let eval = |values: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.tensor(v)).collect();
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(Error::Gradient("non-finite analytic gradient".into()));
    }

    let two = T::of(2.0);
    let mut worst = T::zero();
    let mut probe = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[t].len() {
            let orig = inputs[t].data()[i];
            probe[t].data_mut()[i] = orig + step;
            let plus = eval(&probe)?;
            probe[t].data_mut()[i] = orig - step;
            let minus = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (two * step);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(T::one());
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::<f64>::from_fn(&[5], |i| (i as f64 * 0.7).sin());
        let err = grad_check(|t, v| Ok(t.sum_squares(v[0])), &[x], 1e-5).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::<f64>::zeros(&[1]);
        assert!(grad_check(|t, v| Ok(t.sum(v[0])), &[x], 0.0).is_err());
    }
}
