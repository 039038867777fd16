//! Central-difference gradient oracle.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|, |numeric|)`
/// for a scalar program `f` of one input.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// Same as [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Contract(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&tape, &vars)?.value();
        if !out.is_scalar() {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar program, got shape {:?}",
                out.shape()
            )));
        }
        Ok(out.item())
    };

    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.var(x.clone())).collect();
        let out = f(&tape, &vars)?;
        if !out.value().is_scalar() {
            return Err(Error::Contract(format!(
                "grad_check needs a scalar program, got shape {:?}",
                out.shape()
            )));
        }
        tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, x)| v.grad().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect()
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.numel() {
            let orig = x.data()[i];
            // divide by the step actually taken after rounding x ± eps
            let (up, down) = (orig + eps, orig - eps);
            probe[k].data_mut()[i] = up;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = down;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (up - down);
            let a = analytic[k].data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
