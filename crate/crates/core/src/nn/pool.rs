use crate::error::Result;
use crate::tensor::{Tensor, Var};

/// Spatial mean per channel: `(N,C,H,W) -> (N,C)`.
pub fn global_avg_pool<'t>(x: &Var<'t>) -> Result<Var<'t>> {
    let xv = x.value();
    let [n, c, h, w] = xv.dims4("global_avg_pool")?;
    let hw = h * w;
    let inv = 1.0 / hw as f64;
    let out = Tensor::new(
        &[n, c],
        xv.data().chunks_exact(hw).map(|p| p.iter().sum::<f64>() * inv).collect(),
    )?;
    Ok(x.tape().record(out, &[*x], move |g, _| {
        vec![Some(Tensor::from_fn(&[n, c, h, w], |i| g.data()[i / hw] * inv))]
    }))
}
