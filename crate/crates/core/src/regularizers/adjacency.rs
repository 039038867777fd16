//! Vertex dependency matrices.
//!
//! The default design couples *dissimilar* vertices: with `S = V·Vᵀ`,
//!
//! ```text
//! A = (1 − softmax_rows(S)) / max(n − 1, 1)
//! ```
//!
//! Each row of `1 − softmax` sums to `n − 1`, so rows of `A` sum to 1 for
//! n ≥ 2 and the single-vertex case collapses to `[[0]]`.

use super::vertices::VertexSet;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// One minus row-softmax similarity, scaled by cardinality.
    Eq6,
    /// Trainable matrix independent of the vertex values.
    Learned,
    /// Row-softmax similarity (similar vertices couple strongly).
    Similarity,
    Identity,
    /// Every entry `1/n`.
    Uniform,
    /// All zeros; the generator then emits nothing.
    Zero,
}

impl AdjacencyMode {
    pub const ALL: [AdjacencyMode; 6] = [
        AdjacencyMode::Eq6,
        AdjacencyMode::Learned,
        AdjacencyMode::Similarity,
        AdjacencyMode::Identity,
        AdjacencyMode::Uniform,
        AdjacencyMode::Zero,
    ];
}

impl fmt::Display for AdjacencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjacencyMode::Eq6 => "eq6",
            AdjacencyMode::Learned => "learned",
            AdjacencyMode::Similarity => "similarity",
            AdjacencyMode::Identity => "identity",
            AdjacencyMode::Uniform => "uniform",
            AdjacencyMode::Zero => "zero",
        })
    }
}

impl FromStr for AdjacencyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        AdjacencyMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown adjacency mode `{s}` (eq6 | learned | similarity | identity | uniform | zero)"))
    }
}

#[derive(Clone, Debug)]
pub struct AdjacencyMatrix<'t> {
    pub entries: Var<'t>,
    pub mode: AdjacencyMode,
}

/// Pairwise dot products `V·Vᵀ`, optionally on L2-normalized rows.
pub fn similarity<'t>(values: &Var<'t>, normalize: bool) -> Result<Var<'t>> {
    let v = if normalize { values.l2_normalize_rows()? } else { *values };
    v.matmul(&v.transpose()?)
}

/// `(1 − softmax_rows(sim)) / max(n − 1, 1)`.
pub fn eq6_adjacency<'t>(sim: &Var<'t>) -> Result<Var<'t>> {
    let n = sim.shape()[0];
    let denom = n.saturating_sub(1).max(1) as f64;
    Ok(sim.softmax_rows()?.affine(-1.0 / denom, 1.0 / denom))
}

/// Crops (or tiles, when `n > k`) a `k × k` learned matrix to `n × n`.
pub fn resize_learned<'t>(learned: &Var<'t>, n: usize) -> Result<Var<'t>> {
    let (k, k2) = learned.value().dims2("resize_learned")?;
    if k != k2 {
        return Err(Error::shape("resize_learned", &[k, k2], &[k, k]));
    }
    let idx = (0..n * n).map(|i| (i / n % k) * k + (i % n % k)).collect();
    learned.gather(idx, &[n, n])
}

pub fn build_adjacency<'t>(
    v: &VertexSet<'t>,
    mode: AdjacencyMode,
    normalize_similarity: bool,
    learned: Option<&Var<'t>>,
) -> Result<AdjacencyMatrix<'t>> {
    let n = v.len();
    if n == 0 {
        return Err(Error::Contract("adjacency needs at least one vertex".into()));
    }
    let tape = v.values.tape();
    let entries = match mode {
        AdjacencyMode::Eq6 => eq6_adjacency(&similarity(&v.values, normalize_similarity)?)?,
        AdjacencyMode::Similarity => similarity(&v.values, normalize_similarity)?.softmax_rows()?,
        AdjacencyMode::Learned => {
            let learned = learned.ok_or_else(|| Error::Contract("learned adjacency without a parameter".into()))?;
            resize_learned(learned, n)?
        }
        AdjacencyMode::Identity => tape.constant(Tensor::eye(n)),
        AdjacencyMode::Uniform => tape.constant(Tensor::full(&[n, n], 1.0 / n as f64)),
        AdjacencyMode::Zero => tape.constant(Tensor::zeros(&[n, n])),
    };
    Ok(AdjacencyMatrix { entries, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn set<'t>(tape: &'t Tape, rows: &[&[f64]]) -> VertexSet<'t> {
        VertexSet {
            indices: (0..rows.len()).map(|i| (0, 0, i)).collect(),
            values: tape.constant(Tensor::from_rows(rows)),
        }
    }

    #[test]
    fn single_vertex_is_zero() {
        let tape = Tape::new();
        let a = build_adjacency(&set(&tape, &[&[3.0, -1.0]]), AdjacencyMode::Eq6, false, None).unwrap();
        assert_eq!(a.entries.value().data(), &[0.0]);
    }

    #[test]
    fn identical_pair_is_half() {
        let tape = Tape::new();
        let a = build_adjacency(&set(&tape, &[&[1.0, 2.0], &[1.0, 2.0]]), AdjacencyMode::Eq6, false, None).unwrap();
        assert_eq!(a.entries.value().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn three_vertex_reference() {
        // sim for (1,0),(0,1),(1,1): [[1,0,1],[0,1,1],[1,1,2]]
        let sim = [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0f64]];
        let mut want = [[0.0; 3]; 3];
        for i in 0..3 {
            let z: f64 = sim[i].iter().map(|s| s.exp()).sum();
            for j in 0..3 {
                want[i][j] = (1.0 - sim[i][j].exp() / z) / 2.0;
            }
        }
        let tape = Tape::new();
        let a = build_adjacency(&set(&tape, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]), AdjacencyMode::Eq6, false, None)
            .unwrap()
            .entries
            .value();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.data()[i * 3 + j] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fixed_designs() {
        let tape = Tape::new();
        let v = set(&tape, &[&[1.0], &[2.0], &[3.0]]);
        let get = |m| build_adjacency(&v, m, false, None).unwrap().entries.value();
        assert_eq!(*get(AdjacencyMode::Identity), Tensor::eye(3));
        assert!(get(AdjacencyMode::Uniform).data().iter().all(|&x| x == 1.0 / 3.0));
        assert!(get(AdjacencyMode::Zero).data().iter().all(|&x| x == 0.0));
        let s = get(AdjacencyMode::Similarity);
        for r in s.data().chunks(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(build_adjacency(&v, AdjacencyMode::Learned, false, None).is_err());
    }

    #[test]
    fn learned_matrix_crops_and_tiles() {
        let tape = Tape::new();
        let k = tape.var(Tensor::from_fn(&[2, 2], |i| i as f64));
        assert_eq!(resize_learned(&k, 1).unwrap().value().data(), &[0.0]);
        assert_eq!(
            resize_learned(&k, 3).unwrap().value().data(),
            &[0.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn mode_names_round_trip() {
        for m in AdjacencyMode::ALL {
            assert_eq!(m.to_string().parse::<AdjacencyMode>().unwrap(), m);
        }
    }
}
