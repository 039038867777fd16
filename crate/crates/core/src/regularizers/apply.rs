//! Pooling the per-vertex distortions and writing them into dropped cells.

use super::mask::DropMask;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Tensor, Var};
use rand::Rng;
use rand_distr::Open01;

/// Multipliers in (0, 1): one per spatial position of each item, item `b`
/// drawn from `stream.child(b)` in row-major order.
pub fn draw_multipliers(batch: usize, h: usize, w: usize, stream: &RngStream) -> Tensor {
    let mut data = Vec::with_capacity(batch * h * w);
    for b in 0..batch {
        let mut rng = stream.child(b as u64).rng();
        data.extend((0..h * w).map(|_| rng.sample::<f64, _>(Open01)));
    }
    Tensor::new(&[batch, h, w], data).expect("non-empty")
}

/// `out = x` where the gate keeps, and `pooled[b, c] · u[b, y, x]` where it
/// drops. `pooled` is `(N, C)`, `u` is `(N, H, W)`. Zeros written into
/// dropped cells are always `+0.0`.
pub fn expand_apply<'t>(x: &Var<'t>, mask: &DropMask, pooled: &Var<'t>, u: &Tensor) -> Result<Var<'t>> {
    let xv = x.value();
    let [n, c, h, w] = xv.dims4("expand_apply")?;
    if mask.gate.shape() != [n, h, w] || u.shape() != [n, h, w] {
        return Err(Error::shape("expand_apply", xv.shape(), mask.gate.shape()));
    }
    let pv = pooled.value();
    if pv.shape() != [n, c] {
        return Err(Error::shape("expand_apply", &[n, c], pv.shape()));
    }
    let hw = h * w;
    let gate = mask.gate.clone();
    let u = u.clone();
    let mut out = xv.data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let r = pv.data()[b * c + ch];
            for p in 0..hw {
                if gate.data()[b * hw + p] == 0.0 {
                    out[(b * c + ch) * hw + p] = r * u.data()[b * hw + p] + 0.0;
                }
            }
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    Ok(x.tape().record(out, &[*x, *pooled], move |g, needs| {
        let dx = needs[0].then(|| {
            Tensor::from_fn(&[n, c, h, w], |i| {
                let b = i / (c * hw);
                if gate.data()[b * hw + i % hw] == 0.0 {
                    0.0
                } else {
                    g.data()[i]
                }
            })
        });
        let dp = needs[1].then(|| {
            Tensor::from_fn(&[n, c], |i| {
                let (b, ch) = (i / c, i % c);
                (0..hw)
                    .filter(|&p| gate.data()[b * hw + p] == 0.0)
                    .map(|p| g.data()[(b * c + ch) * hw + p] * u.data()[b * hw + p])
                    .sum()
            })
        });
        vec![dx, dp]
    }))
}

/// Averages each item's `(n_b, c)` distortions over vertices, broadcasts the
/// pooled vector to that item's dropped positions and scales it by fresh
/// multipliers from `stream`. Items without distortions get zeros there.
pub fn pool_expand_apply<'t>(
    x: &Var<'t>,
    mask: &DropMask,
    distortions: &[Option<Var<'t>>],
    stream: &RngStream,
) -> Result<Var<'t>> {
    let [n, c, h, w] = x.value().dims4("pool_expand_apply")?;
    if distortions.len() != n {
        return Err(Error::shape("pool_expand_apply", &[n], &[distortions.len()]));
    }
    let tape = x.tape();
    let rows = distortions
        .iter()
        .map(|d| match d {
            Some(d) => d.mean_rows(),
            None => Ok(tape.constant(Tensor::zeros(&[1, c]))),
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = Var::concat_rows(&rows)?;
    let u = draw_multipliers(n, h, w, stream);
    expand_apply(x, mask, &pooled, &u)
}
