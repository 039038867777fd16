//! Batch normalization over NCHW maps.

use super::params::{Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};
use std::rc::Rc;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; no state changes.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
}

impl NormState {
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: NormState,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            state: NormState::new(channels, 0.1),
        }
    }

    pub fn forward<'t>(&mut self, x: &Var<'t>, p: &Bound<'t>, mode: NormMode) -> Result<Var<'t>> {
        batch_norm(x, &p[self.gamma], &p[self.beta], &mut self.state, mode)
    }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batch_norm<'t>(
    x: &Var<'t>,
    gamma: &Var<'t>,
    beta: &Var<'t>,
    state: &mut NormState,
    mode: NormMode,
) -> Result<Var<'t>> {
    let xv = x.value();
    let [n, c, h, w] = xv.dims4("batch_norm")?;
    if gamma.value().numel() != c || beta.value().numel() != c {
        return Err(Error::shape("batch_norm", xv.shape(), &gamma.shape()));
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let (gv, bv) = (gamma.value(), beta.value());

    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                }
                let m = s / count;
                let mut sq = 0.0;
                for b in 0..n {
                    sq += xv.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = sq / count;
            }
            let mom = state.momentum;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..c {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = (1.0 - mom) * *rm + mom * mean[ch];
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = (1.0 - mom) * *rv + mom * var[ch] * unbias;
            }
            (mean, var)
        }
        NormMode::Eval => (
            state.running_mean.data().to_vec(),
            state.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xv.numel()];
    let mut out = vec![0.0; xv.numel()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                xhat[i] = (xv.data()[i] - mean[ch]) * inv_std[ch];
                out[i] = gv.data()[ch] * xhat[i] + bv.data()[ch];
            }
        }
    }
    let out = Tensor::new(xv.shape(), out)?;
    let xhat = Rc::new(xhat);
    let shape = xv.shape().to_vec();
    Ok(x.tape().record(out, &[*x, *gamma, *beta], move |g, needs| {
        let gd = g.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    dgamma[ch] += gd[i] * xhat[i];
                    dbeta[ch] += gd[i];
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; gd.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let scale = gv.data()[ch] * inv_std[ch];
                    for i in base..base + hw {
                        dx[i] = match mode {
                            NormMode::Train => {
                                scale * (gd[i] - dbeta[ch] / count - xhat[i] * dgamma[ch] / count)
                            }
                            NormMode::Eval => scale * gd[i],
                        };
                    }
                }
            }
            Tensor::new(&shape, dx).expect("shape")
        });
        vec![
            dx,
            needs[1].then(|| Tensor::new(&[c], dgamma).expect("shape")),
            needs[2].then(|| Tensor::new(&[c], dbeta).expect("shape")),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_many, Tape};

    fn input() -> Tensor {
        Tensor::from_fn(&[3, 2, 3, 2], |i| ((i * 37) % 23) as f64 / 7.0 - 1.0)
    }

    #[test]
    fn train_mode_normalizes_and_updates_running_stats() {
        let tape = Tape::new();
        let x = tape.constant(input());
        let (g, b) = (tape.constant(Tensor::ones(&[2])), tape.constant(Tensor::zeros(&[2])));
        let mut st = NormState::new(2, 0.1);
        let y = batch_norm(&x, &g, &b, &mut st, NormMode::Train).unwrap().value();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|bi| y.data()[(bi * 2 + ch) * 6..(bi * 2 + ch + 1) * 6].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / 18.0;
            assert!(m.abs() < 1e-12);
        }
        assert_ne!(st.running_mean, Tensor::zeros(&[2]));
        assert!(st.running_var.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eval_mode_is_affine_and_stateless() {
        let mut st = NormState::new(2, 0.1);
        st.running_mean = Tensor::new(&[2], vec![0.3, -0.2]).unwrap();
        st.running_var = Tensor::new(&[2], vec![2.0, 0.5]).unwrap();
        let before = st.clone();
        let run = |x: Tensor, st: &mut NormState| {
            let tape = Tape::new();
            let xv = tape.constant(x);
            let g = tape.constant(Tensor::new(&[2], vec![1.5, 0.5]).unwrap());
            let b = tape.constant(Tensor::new(&[2], vec![0.1, 0.2]).unwrap());
            (*batch_norm(&xv, &g, &b, st, NormMode::Eval).unwrap().value()).clone()
        };
        let x = input();
        let y1 = run(x.clone(), &mut st);
        let y2 = run(x.clone(), &mut st);
        assert!(y1.bit_eq(&y2));
        assert_eq!(st, before);
        // affine: f(x + t) - f(x) linear in t
        let shifted = run(x.map(|v| v + 1.0), &mut st);
        let shifted2 = run(x.map(|v| v + 2.0), &mut st);
        for i in 0..x.numel() {
            let d1 = shifted.data()[i] - y1.data()[i];
            let d2 = shifted2.data()[i] - y1.data()[i];
            assert!((2.0 * d1 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_differences_in_both_modes() {
        for mode in [NormMode::Train, NormMode::Eval] {
            let err = grad_check_many(
                |_, v| {
                    let mut st = NormState::new(2, 0.1);
                    st.running_var = Tensor::new(&[2], vec![0.7, 1.3]).unwrap();
                    let y = batch_norm(&v[0], &v[1], &v[2], &mut st, mode)?;
                    let w = v[0].tape().constant(Tensor::from_fn(&[3, 2, 3, 2], |i| (i as f64).sin()));
                    Ok(y.mul(&w)?.sum())
                },
                &[input(), Tensor::new(&[2], vec![1.2, 0.8]).unwrap(), Tensor::new(&[2], vec![0.1, -0.3]).unwrap()],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }
}
