//! Distortion generators: map a vertex set to per-vertex distortions.

use crate::error::{Error, Result};
use crate::nn::{kaiming_normal, Bound, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Tensor, Var};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Bottleneck GCN stack.
    Graph,
    /// Gaussian noise with the vertices' per-channel spread.
    RandomNoise,
    /// Channel means of the vertices, repeated for every vertex.
    AvgPool,
    /// No distortion: dropped positions become 0.
    None,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Graph => "graph",
            GeneratorKind::RandomNoise => "random_noise",
            GeneratorKind::AvgPool => "avg_pool",
            GeneratorKind::None => "none",
        })
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "graph" => GeneratorKind::Graph,
            "random_noise" => GeneratorKind::RandomNoise,
            "avg_pool" => GeneratorKind::AvgPool,
            "none" => GeneratorKind::None,
            other => return Err(format!("unknown generator `{other}` (graph | random_noise | avg_pool | none)")),
        })
    }
}

/// Weights of the three GCN layers: `c → c/4`, `c/4 → c/4`, `c/4 → c`.
#[derive(Clone, Debug)]
pub struct GraphGeneratorParams {
    pub w_in: ParamId,
    pub w_mid: ParamId,
    pub w_out: ParamId,
    pub channels: usize,
}

impl GraphGeneratorParams {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, init: &RngStream) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(4) {
            return Err(Error::config(
                "channels",
                format!("graph generator needs channels divisible by 4, got {channels}"),
            ));
        }
        let r = channels / 4;
        Ok(Self {
            w_in: store.add(format!("{name}.w_in"), kaiming_normal(&[channels, r], channels, &init.child(0))),
            w_mid: store.add(format!("{name}.w_mid"), kaiming_normal(&[r, r], r, &init.child(1))),
            w_out: store.add(format!("{name}.w_out"), kaiming_normal(&[r, channels], r, &init.child(2))),
            channels,
        })
    }

    pub fn forward<'t>(&self, v: &Var<'t>, a: &Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        distortion_generator_graph(v, a, &p[self.w_in], &p[self.w_mid], &p[self.w_out])
    }
}

/// Three GCN layers sharing `a`:
///
/// ```text
/// h1  = relu(A·V·W_in)
/// h2  = relu(h1 + A·h1·W_mid)
/// out = A·h2·W_out
/// ```
///
/// Only the middle layer is residual, so `A = 0` gives exactly zero output.
pub fn distortion_generator_graph<'t>(
    v: &Var<'t>,
    a: &Var<'t>,
    w_in: &Var<'t>,
    w_mid: &Var<'t>,
    w_out: &Var<'t>,
) -> Result<Var<'t>> {
    let c = v.shape()[1];
    if !c.is_multiple_of(4) {
        return Err(Error::config("channels", format!("{c} is not divisible by 4")));
    }
    let h1 = a.matmul(&v.matmul(w_in)?)?.relu();
    let h2 = h1.add(&a.matmul(&h1.matmul(w_mid)?)?)?.relu();
    a.matmul(&h2.matmul(w_out)?)
}

/// Non-graph generators. `RandomNoise` output is a constant (no gradient);
/// `AvgPool` stays differentiable in `v`.
pub fn distortion_generator_alt<'t>(v: &Var<'t>, kind: GeneratorKind, stream: &RngStream) -> Result<Var<'t>> {
    let vv = v.value();
    let (n, c) = vv.dims2("distortion_generator_alt")?;
    let tape = v.tape();
    match kind {
        GeneratorKind::AvgPool => tape.constant(Tensor::full(&[n, n], 1.0 / n as f64)).matmul(v),
        GeneratorKind::RandomNoise => {
            let mut std = vec![0.0; c];
            for (ch, s) in std.iter_mut().enumerate() {
                let mean = (0..n).map(|i| vv.data()[i * c + ch]).sum::<f64>() / n as f64;
                let var = (0..n).map(|i| (vv.data()[i * c + ch] - mean).powi(2)).sum::<f64>() / n as f64;
                *s = var.sqrt();
            }
            let mut rng = stream.rng();
            let noise = Tensor::from_fn(&[n, c], |i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std[i % c]
            });
            Ok(tape.constant(noise))
        }
        GeneratorKind::None => Ok(tape.constant(Tensor::zeros(&[n, c]))),
        GeneratorKind::Graph => Err(Error::Contract("graph generator needs adjacency and weights".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn mat(r: usize, c: usize, seed: f64) -> Tensor {
        Tensor::from_fn(&[r, c], |i| ((i as f64 + 1.0) * seed).sin())
    }

    #[test]
    fn zero_adjacency_or_weights_give_zero() {
        let tape = Tape::new();
        let v = tape.constant(mat(3, 8, 0.7));
        let w_in = tape.constant(mat(8, 2, 0.3));
        let w_mid = tape.constant(mat(2, 2, 0.5));
        let w_out = tape.constant(mat(2, 8, 0.9));
        let a0 = tape.constant(Tensor::zeros(&[3, 3]));
        let out = distortion_generator_graph(&v, &a0, &w_in, &w_mid, &w_out).unwrap().value();
        assert!(out.data().iter().all(|&x| x == 0.0));
        let a = tape.constant(mat(3, 3, 0.2));
        let z_in = tape.constant(Tensor::zeros(&[8, 2]));
        let z_mid = tape.constant(Tensor::zeros(&[2, 2]));
        let z_out = tape.constant(Tensor::zeros(&[2, 8]));
        let out = distortion_generator_graph(&v, &a, &z_in, &z_mid, &z_out).unwrap().value();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_stepwise_matrix_oracle() {
        let (v, a) = (mat(2, 4, 0.7), mat(2, 2, 1.1));
        let (wi, wm, wo) = (mat(4, 1, 0.4), mat(1, 1, 0.6), mat(1, 4, 0.8));
        let relu = |t: Tensor| t.map(|x| x.max(0.0));
        let h1 = relu(a.matmul(&v).unwrap().matmul(&wi).unwrap());
        let upd = a.matmul(&h1).unwrap().matmul(&wm).unwrap();
        let h2 = relu(Tensor::from_fn(&[2, 1], |i| h1.data()[i] + upd.data()[i]));
        let want = a.matmul(&h2).unwrap().matmul(&wo).unwrap();

        let tape = Tape::new();
        let c = |t: &Tensor| tape.constant(t.clone());
        let got = distortion_generator_graph(&c(&v), &c(&a), &c(&wi), &c(&wm), &c(&wo)).unwrap().value();
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn channel_count_must_divide_by_four() {
        let mut store = ParamStore::new();
        assert!(GraphGeneratorParams::new(&mut store, "g", 6, &RngStream::new(0)).is_err());
        let p = GraphGeneratorParams::new(&mut store, "g", 8, &RngStream::new(0)).unwrap();
        assert_eq!(store.get(p.w_in).value.shape(), &[8, 2]);
        assert_eq!(store.get(p.w_out).value.shape(), &[2, 8]);
    }

    #[test]
    fn avg_pool_rows_are_channel_means() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::from_rows(&[&[0.0, 2.0], &[2.0, 0.0]]));
        let out = distortion_generator_alt(&v, GeneratorKind::AvgPool, &RngStream::new(0)).unwrap().value();
        assert_eq!(out.data(), &[1.0, 1.0, 1.0, 1.0]);
        let same = tape.constant(Tensor::from_rows(&[&[0.5, -1.5], &[0.5, -1.5], &[0.5, -1.5]]));
        let out = distortion_generator_alt(&same, GeneratorKind::AvgPool, &RngStream::new(0)).unwrap().value();
        for r in out.data().chunks(2) {
            assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] + 1.5).abs() < 1e-15);
        }
    }
}
