//! Partial graph reasoning without a mask branch: sampled feature vectors
//! are replaced by `A·V·W`, the rest pass through.

use super::adjacency::{eq6_adjacency, similarity};
use super::vertices::{activation_scores, gather_vertices, sample_positions, top_positions, SamplingStrategy};
use super::Mode;
use crate::error::{Error, Result};
use crate::nn::{kaiming_normal, Bound, ParamId, ParamStore};
use crate::rng::{site, RngStream};
use crate::tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialGraphConfig {
    pub alpha: f64,
    pub strategy: SamplingStrategy,
    /// Keep the replacement active at inference instead of skipping it.
    pub keep_at_inference: bool,
}

impl Default for PartialGraphConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            strategy: SamplingStrategy::Random,
            keep_at_inference: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PartialGraph {
    pub config: PartialGraphConfig,
    pub weight: ParamId,
}

/// Writes `rows` (stacked in `items` order) over the listed positions.
fn replace_positions<'t>(x: &Var<'t>, items: &[(usize, Vec<usize>)], rows: &Var<'t>) -> Result<Var<'t>> {
    let xv = x.value();
    let [_, c, h, w] = xv.dims4("replace_positions")?;
    let hw = h * w;
    let targets: Vec<usize> = items
        .iter()
        .flat_map(|(b, pos)| pos.iter().flat_map(move |&p| (0..c).map(move |ch| (b * c + ch) * hw + p)))
        .collect();
    let rv = rows.value();
    if rv.numel() != targets.len() {
        return Err(Error::shape("replace_positions", &[targets.len()], rv.shape()));
    }
    let mut out = xv.data().to_vec();
    for (&t, &v) in targets.iter().zip(rv.data()) {
        out[t] = v;
    }
    let out = Tensor::new(xv.shape(), out)?;
    let (xshape, rshape) = (xv.shape().to_vec(), rv.shape().to_vec());
    Ok(x.tape().record(out, &[*x, *rows], move |g, needs| {
        let dx = needs[0].then(|| {
            let mut d = g.clone();
            for &t in &targets {
                d.data_mut()[t] = 0.0;
            }
            debug_assert_eq!(d.shape(), &xshape[..]);
            d
        });
        let dr = needs[1].then(|| Tensor::new(&rshape, targets.iter().map(|&t| g.data()[t]).collect()).expect("shape"));
        vec![dx, dr]
    }))
}

impl PartialGraph {
    pub fn new(store: &mut ParamStore, name: &str, config: PartialGraphConfig, channels: usize, init: &RngStream) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(Error::config("alpha", format!("{} outside [0, 1]", config.alpha)));
        }
        let weight = store.add(format!("{name}.weight"), kaiming_normal(&[channels, channels], channels, init));
        Ok(Self { config, weight })
    }

    pub fn active(&self, mode: Mode) -> bool {
        self.config.alpha > 0.0 && (mode == Mode::Train || self.config.keep_at_inference)
    }

    pub fn forward<'t>(&self, x: &Var<'t>, p: &Bound<'t>, stream: &RngStream, mode: Mode) -> Result<Var<'t>> {
        if !self.active(mode) {
            return Ok(*x);
        }
        let xv = x.value();
        let [n, _, h, w] = xv.dims4("partial_graph")?;
        let mut items = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for b in 0..n {
            let positions = match self.config.strategy {
                SamplingStrategy::Random => {
                    sample_positions(h * w, self.config.alpha, &stream.child(site::VERTICES).child(b as u64))?
                }
                SamplingStrategy::Top => top_positions(&activation_scores(&xv, b)?, self.config.alpha)?,
            };
            let v = gather_vertices(x, b, &positions)?;
            let a = eq6_adjacency(&similarity(&v.values, false)?)?;
            rows.push(a.matmul(&v.values)?.matmul(&p[self.weight])?);
            items.push((b, positions));
        }
        let rows = Var::concat_rows(&rows)?;
        replace_positions(x, &items, &rows)
    }
}
