//! Bernoulli dropout baselines.

use super::Mode;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Tensor, Var};
use rand::Rng;

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Contract(format!("drop probability {rho} outside [0, 1)")));
    }
    Ok(())
}

fn apply_gate<'t>(x: &Var<'t>, gate: Tensor, rho: f64, rescale: bool) -> Result<Var<'t>> {
    let gate = if rescale { gate.map(|g| g / (1.0 - rho)) } else { gate };
    x.mul(&x.tape().constant(gate))
}

/// Zeroes each scalar independently with probability `rho`. Kept values
/// are left as they are unless `rescale` is set, in which case they are
/// divided by `1 - rho`.
pub fn dropout<'t>(x: &Var<'t>, rho: f64, rescale: bool, stream: &RngStream, mode: Mode) -> Result<Var<'t>> {
    check_rho(rho)?;
    if mode == Mode::Eval || rho == 0.0 {
        return Ok(*x);
    }
    let mut rng = stream.rng();
    let gate = Tensor::from_fn(&x.shape(), |_| if rng.random::<f64>() < rho { 0.0 } else { 1.0 });
    apply_gate(x, gate, rho, rescale)
}

/// Drops whole feature vectors: one gate per `(batch, y, x)` of an NCHW
/// map, broadcast over channels.
pub fn spatial_dropout<'t>(x: &Var<'t>, rho: f64, rescale: bool, stream: &RngStream, mode: Mode) -> Result<Var<'t>> {
    check_rho(rho)?;
    if mode == Mode::Eval || rho == 0.0 {
        return Ok(*x);
    }
    let [n, c, h, w] = x.value().dims4("spatial_dropout")?;
    let mut rng = stream.rng();
    let spatial: Vec<f64> = (0..n * h * w)
        .map(|_| if rng.random::<f64>() < rho { 0.0 } else { 1.0 })
        .collect();
    let hw = h * w;
    let gate = Tensor::from_fn(&[n, c, h, w], |i| {
        let b = i / (c * hw);
        spatial[b * hw + i % hw]
    });
    apply_gate(x, gate, rho, rescale)
}
