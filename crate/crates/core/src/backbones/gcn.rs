//! Two-layer GCN over a fixed graph.

use super::Pass;
use crate::error::{Error, Result};
use crate::nn::{kaiming_normal, Bound, ParamId, ParamStore};
use crate::regularizers::{Regularizer, RegularizerSpec};
use crate::rng::{site, RngStream};
use crate::tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoLayerGcnConfig {
    pub in_features: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl TwoLayerGcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_features == 0 || self.classes < 2 {
            return Err(Error::config("classes", "need features and at least two classes"));
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(4) {
            return Err(Error::config(
                "hidden",
                format!("{} is not a positive multiple of 4", self.hidden),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphInstance {
    pub node_features: Tensor,
    /// `D^-1/2 (A + I) D^-1/2`.
    pub normalized_adjacency: Tensor,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl GraphInstance {
    pub fn nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes();
        if self.node_features.ndim() != 2 || self.node_features.shape()[0] != n {
            return Err(Error::shape("graph_instance", &[n, 0], self.node_features.shape()));
        }
        if self.normalized_adjacency.shape() != [n, n] {
            return Err(Error::shape("graph_instance", &[n, n], self.normalized_adjacency.shape()));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Contract(format!("node {i} is out of range or in two splits")));
            }
        }
        Ok(())
    }
}

/// Symmetric normalization of `A + I` for an undirected edge list.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Tensor> {
    let mut a = Tensor::eye(n);
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::Contract(format!("edge ({i}, {j}) outside {n} nodes")));
        }
        if i != j {
            a.data_mut()[i * n + j] = 1.0;
            a.data_mut()[j * n + i] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = a.data().chunks_exact(n).map(|r| 1.0 / r.iter().sum::<f64>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            a.data_mut()[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(a)
}

/// `logits = Â·reg(relu(Â·X·W₁))·W₂`, no biases.
///
/// The regularizer sees the hidden features as a `(1, hidden, n, 1)` map, so
/// every node is one spatial position. Block size is forced to 1.
#[derive(Clone, Debug)]
pub struct TwoLayerGcn {
    pub config: TwoLayerGcnConfig,
    pub spec: RegularizerSpec,
    pub store: ParamStore,
    w1: ParamId,
    w2: ParamId,
    reg: Regularizer,
}

impl TwoLayerGcn {
    pub fn new(config: TwoLayerGcnConfig, nodes: usize, spec: RegularizerSpec, init: &RngStream) -> Result<Self> {
        config.validate()?;
        let spec = match spec {
            RegularizerSpec::DropGraph(mut cfg) => {
                cfg.block_size = 1;
                RegularizerSpec::DropGraph(cfg)
            }
            RegularizerSpec::DropBlock { rho, scheduler, .. } => RegularizerSpec::DropBlock {
                rho,
                block_size: 1,
                scheduler,
            },
            other => other,
        };
        let init = init.child(site::INIT);
        let mut store = ParamStore::new();
        let (f, h, k) = (config.in_features, config.hidden, config.classes);
        let w1 = store.add("w1", kaiming_normal(&[f, h], f, &init.child_named("w1")));
        let w2 = store.add("w2", kaiming_normal(&[h, k], h, &init.child_named("w2")));
        let reg = Regularizer::new(&mut store, "reg", spec, h, (nodes, 1), &init.child_named("reg"))?;
        Ok(Self {
            config,
            spec,
            store,
            w1,
            w2,
            reg,
        })
    }

    pub fn forward<'t>(&self, g: &GraphInstance, p: &Bound<'t>, pass: &Pass) -> Result<Var<'t>> {
        let tape = p[self.w1].tape();
        let n = g.nodes();
        let a = tape.constant(g.normalized_adjacency.clone());
        let x = tape.constant(g.node_features.clone());
        let h = a.matmul(&x.matmul(&p[self.w1])?)?.relu();
        let h = if self.reg.active(pass.reg) {
            let hidden = self.config.hidden;
            let map = h.transpose()?.reshape(&[1, hidden, n, 1])?;
            let out = self.reg.forward(&map, p, pass.progress, &pass.stream, pass.reg, None)?;
            out.reshape(&[hidden, n])?.transpose()?
        } else {
            h
        };
        a.matmul(&h.matmul(&p[self.w2])?)
    }

    pub fn state_entries(&self) -> Vec<(String, Tensor)> {
        self.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        self.store.load(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::{Mode, RegularizerConfig};
    use crate::tensor::Tape;

    fn path4() -> GraphInstance {
        GraphInstance {
            node_features: Tensor::from_fn(&[4, 2], |i| [1.0, 0.0, 0.5, -1.0, 0.0, 2.0, -1.5, 1.0][i]),
            normalized_adjacency: normalized_adjacency(4, &[(0, 1), (1, 2), (2, 3)]).unwrap(),
            labels: vec![0, 0, 1, 1],
            train: vec![0, 3],
            val: vec![1],
            test: vec![2],
        }
    }

    #[test]
    fn path_graph_normalization() {
        let a = normalized_adjacency(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        // degrees with self loops: 2, 3, 3, 2
        let d = [2.0f64, 3.0, 3.0, 2.0];
        for i in 0..4usize {
            for j in 0..4usize {
                let adj = i == j || i.abs_diff(j) == 1;
                let want = if adj { 1.0 / (d[i] * d[j]).sqrt() } else { 0.0 };
                assert!((a.data()[i * 4 + j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hand_set_weights_match_matrix_oracle() {
        let g = path4();
        let cfg = TwoLayerGcnConfig {
            in_features: 2,
            hidden: 4,
            classes: 2,
        };
        let mut net = TwoLayerGcn::new(cfg, 4, RegularizerSpec::None, &RngStream::new(0)).unwrap();
        let w1 = Tensor::from_fn(&[2, 4], |i| [0.5, -1.0, 0.25, 1.0, 1.0, 0.5, -0.5, 0.0][i]);
        let w2 = Tensor::from_fn(&[4, 2], |i| [1.0, -1.0, 0.5, 0.5, -0.25, 1.0, 2.0, 0.0][i]);
        net.store.get_mut(net.w1).value = w1.clone();
        net.store.get_mut(net.w2).value = w2.clone();
        let tape = Tape::new();
        let p = net.store.bind(&tape, false);
        let got = net.forward(&g, &p, &Pass::eval()).unwrap().value();

        let a = &g.normalized_adjacency;
        let h = a.matmul(&g.node_features).unwrap().matmul(&w1).unwrap().map(|v| v.max(0.0));
        let want = a.matmul(&h).unwrap().matmul(&w2).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn eval_matches_unregularized_and_block_size_is_one() {
        let g = path4();
        let cfg = TwoLayerGcnConfig {
            in_features: 2,
            hidden: 4,
            classes: 2,
        };
        let rc = RegularizerConfig {
            alpha: 0.5,
            ..Default::default()
        };
        let reg = TwoLayerGcn::new(cfg, 4, RegularizerSpec::DropGraph(rc), &RngStream::new(5)).unwrap();
        match reg.spec {
            RegularizerSpec::DropGraph(c) => assert_eq!(c.block_size, 1),
            _ => unreachable!(),
        }
        let plain = TwoLayerGcn::new(cfg, 4, RegularizerSpec::None, &RngStream::new(5)).unwrap();
        let tape = Tape::new();
        let a = reg.forward(&g, &reg.store.bind(&tape, false), &Pass::eval()).unwrap().value();
        let b = plain.forward(&g, &plain.store.bind(&tape, false), &Pass::eval()).unwrap().value();
        assert!(a.bit_eq(&b));
        let mut pass = Pass::eval();
        pass.reg = Mode::Train;
        assert!(reg.forward(&g, &reg.store.bind(&tape, false), &pass).is_ok());
    }
}
