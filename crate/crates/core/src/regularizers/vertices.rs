//! Vertex sampling: which spatial feature vectors join the graph.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    /// Each position independently with probability α.
    Random,
    /// The ⌈α·h·w⌉ positions with the largest summed absolute activation.
    Top,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Random => "random",
            SamplingStrategy::Top => "top",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(SamplingStrategy::Random),
            "top" => Ok(SamplingStrategy::Top),
            other => Err(format!("unknown sampling strategy `{other}` (random | top)")),
        }
    }
}

/// Sampled feature vectors of one batch item.
#[derive(Clone, Debug)]
pub struct VertexSet<'t> {
    /// `(batch, y, x)` of each vertex, in row-major position order.
    pub indices: Vec<(usize, usize, usize)>,
    /// `(n, c)` rows gathered from the feature map.
    pub values: Var<'t>,
}

impl VertexSet<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("sampling ratio {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Bernoulli(α) selection over `positions` slots. When α > 0 and nothing
/// was drawn, one uniformly chosen slot is forced in so the graph is never
/// empty. α = 0 returns nothing.
pub fn sample_positions(positions: usize, alpha: f64, stream: &RngStream) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    if alpha == 0.0 || positions == 0 {
        return Ok(Vec::new());
    }
    let mut rng = stream.rng();
    let mut picked: Vec<usize> = (0..positions).filter(|_| rng.random::<f64>() < alpha).collect();
    if picked.is_empty() {
        picked.push(rng.random_range(0..positions));
    }
    Ok(picked)
}

/// The `⌈α·positions⌉` slots with the largest score; ties go to the lower
/// index.
pub fn top_positions(scores: &[f64], alpha: f64) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    if alpha == 0.0 || scores.is_empty() {
        return Ok(Vec::new());
    }
    let k = ((alpha * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Gathers the `(n, c)` rows of item `b` at spatial `positions` (flat `y*w+x`).
pub fn gather_vertices<'t>(x: &Var<'t>, b: usize, positions: &[usize]) -> Result<VertexSet<'t>> {
    let [n, c, h, w] = x.value().dims4("gather_vertices")?;
    if b >= n {
        return Err(Error::Contract(format!("batch item {b} out of range {n}")));
    }
    let hw = h * w;
    if let Some(&bad) = positions.iter().find(|&&p| p >= hw) {
        return Err(Error::Contract(format!("position {bad} outside {h}x{w} map")));
    }
    let flat: Vec<usize> = positions
        .iter()
        .flat_map(|&p| (0..c).map(move |ch| (b * c + ch) * hw + p))
        .collect();
    let values = x.gather(flat, &[positions.len(), c])?;
    Ok(VertexSet {
        indices: positions.iter().map(|&p| (b, p / w, p % w)).collect(),
        values,
    })
}

/// Random vertex sets for every batch item of an NCHW map; item `b` draws
/// from `stream.child(b)`. Items with no vertices (α = 0) come back empty-
/// handed as `None`.
pub fn sample_vertices<'t>(x: &Var<'t>, alpha: f64, stream: &RngStream) -> Result<Vec<Option<VertexSet<'t>>>> {
    let [n, _, h, w] = x.value().dims4("sample_vertices")?;
    (0..n)
        .map(|b| {
            let pos = sample_positions(h * w, alpha, &stream.child(b as u64))?;
            if pos.is_empty() {
                Ok(None)
            } else {
                gather_vertices(x, b, &pos).map(Some)
            }
        })
        .collect()
}

/// Per-position summed absolute activation of item `b`.
pub fn activation_scores(x: &Tensor, b: usize) -> Result<Vec<f64>> {
    let [_, c, h, w] = x.dims4("activation_scores")?;
    let hw = h * w;
    Ok((0..hw)
        .map(|p| (0..c).map(|ch| x.data()[(b * c + ch) * hw + p].abs()).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn full_and_empty_ratios() {
        let s = RngStream::new(3);
        assert_eq!(sample_positions(64, 1.0, &s).unwrap(), (0..64).collect::<Vec<_>>());
        assert!(sample_positions(64, 0.0, &s).unwrap().is_empty());
        assert!(sample_positions(64, 1.5, &s).is_err());
    }

    #[test]
    fn empty_draw_is_patched() {
        // tiny alpha on few slots: the raw draw is almost always empty
        for seed in 0..50 {
            let p = sample_positions(4, 1e-9, &RngStream::new(seed)).unwrap();
            assert_eq!(p.len(), 1);
            assert!(p[0] < 4);
        }
    }

    #[test]
    fn top_picks_largest() {
        let scores = [0.1, 5.0, 0.3, 5.0, 2.0, 0.0, 1.0, 0.2];
        assert_eq!(top_positions(&scores, 0.25).unwrap(), vec![1, 3]);
        assert_eq!(top_positions(&scores, 0.3).unwrap(), vec![1, 3, 4]);
        assert_eq!(top_positions(&scores, 1.0).unwrap().len(), 8);
    }

    #[test]
    fn gathered_rows_match_the_map() {
        let tape = Tape::new();
        let t = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f64);
        let x = tape.constant(t.clone());
        let sets = sample_vertices(&x, 0.5, &RngStream::new(8)).unwrap();
        for (b, set) in sets.iter().enumerate() {
            let set = set.as_ref().unwrap();
            let vals = set.values.value();
            let mut seen = std::collections::HashSet::new();
            for (i, &(bb, y, xx)) in set.indices.iter().enumerate() {
                assert_eq!(bb, b);
                assert!(seen.insert((y, xx)));
                for ch in 0..3 {
                    assert_eq!(vals.data()[i * 3 + ch], t.data()[((b * 3 + ch) * 4 + y) * 5 + xx]);
                }
            }
        }
    }
}
