//! Differentiable primitives on [`Var`].

use super::{gemm, Layout, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    Ok(sa)
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("shapes checked by caller")
}

impl<'t> Var<'t> {
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_shape("add", self, other)?;
        let out = zip_with(&self.value(), &other.value(), |x, y| x + y);
        Ok(self.tape().record(out, &[*self, *other], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_shape("sub", self, other)?;
        let out = zip_with(&self.value(), &other.value(), |x, y| x - y);
        Ok(self
            .tape()
            .record(out, &[*self, *other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_shape("mul", self, other)?;
        let (a, b) = (self.value(), other.value());
        let out = zip_with(&a, &b, |x, y| x * y);
        Ok(self.tape().record(out, &[*self, *other], move |g, needs| {
            vec![
                needs[0].then(|| zip_with(g, &b, |x, y| x * y)),
                needs[1].then(|| zip_with(g, &a, |x, y| x * y)),
            ]
        }))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        let out = self.value().map(|v| scale * v + shift);
        self.tape()
            .record(out, &[*self], move |g, _| vec![Some(g.map(|v| scale * v))])
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    /// Rectifier with a zero subgradient at 0.
    pub fn relu(&self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| if v > 0.0 { v } else { 0.0 });
        self.tape().record(out, &[*self], move |g, _| {
            vec![Some(zip_with(g, &x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))]
        })
    }

    pub fn sum(&self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().record(Tensor::scalar(x.sum()), &[*self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.tape().record(out, &[*self], move |g, _| {
            vec![Some(g.reshape(&orig).expect("same numel"))]
        }))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let out = self.value().transpose()?;
        Ok(self
            .tape()
            .record(out, &[*self], |g, _| vec![Some(g.transpose().expect("2-d"))]))
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b)?;
        let (m, k) = a.dims2("matmul")?;
        let n = b.shape()[1];
        Ok(self.tape().record(out, &[*self, *other], move |g, needs| {
            let da = needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g.data(), Layout::Normal, b.data(), Layout::Transposed, &mut d, 0.0);
                Tensor::new(&[m, k], d).expect("shape")
            });
            let db = needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, a.data(), Layout::Transposed, g.data(), Layout::Normal, &mut d, 0.0);
                Tensor::new(&[k, n], d).expect("shape")
            });
            vec![da, db]
        }))
    }

    /// Adds a length-`n` vector to every row of an `(m, n)` matrix.
    pub fn add_row_vector(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        let (x, b) = (self.value(), bias.value());
        let (m, n) = x.dims2("add_row_vector")?;
        if b.numel() != n {
            return Err(Error::shape("add_row_vector", x.shape(), b.shape()));
        }
        let out = Tensor::from_fn(&[m, n], |i| x.data()[i] + b.data()[i % n]);
        let bshape = b.shape().to_vec();
        Ok(self.tape().record(out, &[*self, *bias], move |g, needs| {
            let db = needs[1].then(|| {
                let mut acc = vec![0.0; n];
                for row in g.data().chunks_exact(n) {
                    acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                Tensor::new(&bshape, acc).expect("shape")
            });
            vec![Some(g.clone()), db]
        }))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = x.dims2("softmax_rows")?;
        let out = softmax_rows(&x, m, n);
        let y = std::rc::Rc::new(out.clone());
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                let yr = &y.data()[i * n..(i + 1) * n];
                let gr = &g.data()[i * n..(i + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d[i * n + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::new(&[m, n], d).expect("shape"))]
        }))
    }

    /// Divides each row by its Euclidean norm (rows of norm below 1e-12 are
    /// left as they are).
    pub fn l2_normalize_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = x.dims2("l2_normalize_rows")?;
        let norms: Vec<f64> = x
            .data()
            .chunks_exact(n)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_fn(&[m, n], |i| {
            let nr = norms[i / n];
            if nr > 1e-12 {
                x.data()[i] / nr
            } else {
                x.data()[i]
            }
        });
        let y = out.clone();
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let mut d = g.data().to_vec();
            for i in 0..m {
                let nr = norms[i];
                if nr <= 1e-12 {
                    continue;
                }
                let yr = &y.data()[i * n..(i + 1) * n];
                let gr = &g.data()[i * n..(i + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d[i * n + j] = (gr[j] - yr[j] * dot) / nr;
                }
            }
            vec![Some(Tensor::new(&[m, n], d).expect("shape"))]
        }))
    }

    /// Picks flat elements: `out.flat[i] = self.flat[indices[i]]`.
    /// Repeated indices are allowed; their gradients add up.
    pub fn gather(&self, indices: Vec<usize>, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let numel = x.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= numel) {
            return Err(Error::Contract(format!("gather index {bad} out of range {numel}")));
        }
        let out = Tensor::new(shape, indices.iter().map(|&i| x.data()[i]).collect())?;
        let src_shape = x.shape().to_vec();
        Ok(self.tape().record(out, &[*self], move |g, _| {
            let mut d = Tensor::zeros(&src_shape);
            let dd = d.data_mut();
            for (&i, &v) in indices.iter().zip(g.data()) {
                dd[i] += v;
            }
            vec![Some(d)]
        }))
    }

    /// Stacks 2-d vars with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let cols = first.value().dims2("concat_rows")?.1;
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            let v = p.value();
            let (r, c) = v.dims2("concat_rows")?;
            if c != cols {
                return Err(Error::shape("concat_rows", &first.shape(), v.shape()));
            }
            rows.push(r);
            data.extend_from_slice(v.data());
        }
        let total: usize = rows.iter().sum();
        let out = Tensor::new(&[total, cols], data)?;
        Ok(first.tape().record(out, parts, move |g, needs| {
            let mut offset = 0;
            rows.iter()
                .zip(needs)
                .map(|(&r, &need)| {
                    let slice = &g.data()[offset * cols..(offset + r) * cols];
                    offset += r;
                    need.then(|| Tensor::new(&[r, cols], slice.to_vec()).expect("shape"))
                })
                .collect()
        }))
    }

    /// Column means of an `(n, c)` matrix as a `(1, c)` row.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (n, c) = x.dims2("mean_rows")?;
        let mut acc = vec![0.0; c];
        for row in x.data().chunks_exact(c) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        let out = Tensor::new(&[1, c], acc)?;
        Ok(self.tape().record(out, &[*self], move |g, _| {
            vec![Some(Tensor::from_fn(&[n, c], |i| g.data()[i % c] * inv))]
        }))
    }
}

pub(crate) fn softmax_rows(x: &Tensor, m: usize, n: usize) -> Tensor {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data()[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..n {
            let e = (row[j] - max).exp();
            out[i * n + j] = e;
            total += e;
        }
        out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(&[m, n], out).expect("shape")
}

#[cfg(test)]
mod tests {
    use crate::tensor::{grad_check, Tape, Tensor};

    #[test]
    fn sum_and_square_gradients() {
        let tape = Tape::new();
        let x = tape.var(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let x = tape.var(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2]));
        assert!(x.relu().backward().is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::ones(&[2, 2]));
        let w = tape.var(Tensor::eye(2));
        let y = c.matmul(&w).unwrap().sum();
        assert!(y.requires_grad());
        y.backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(w.grad().unwrap().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_reference_values() {
        // exp-normalize of [1,2,3] evaluated in closed form
        let e = [1f64.exp(), 2f64.exp(), 3f64.exp()];
        let z: f64 = e.iter().sum();
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], &[5.0, 5.0, 5.0]]));
        let y = x.softmax_rows().unwrap().value();
        for j in 0..3 {
            assert!((y.data()[j] - e[j] / z).abs() < 1e-15);
            assert!((y.data()[3 + j] - 1.0 / 3.0).abs() < 1e-15);
            assert!((y.data()[6 + j] - 1.0 / 3.0).abs() < 1e-15);
        }
        let tape = Tape::new();
        let y = tape.constant(Tensor::from_rows(&[&[0.0, 0.0]])).softmax_rows().unwrap().value();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn primitive_gradients_match_differences() {
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.7).sin() + 0.05);
        let w = Tensor::from_fn(&[4, 2], |i| (i as f64 * 1.3).cos());
        let err = grad_check(
            |_, v| {
                let wv = v.tape().constant(w.clone());
                let s = v.matmul(&wv)?.softmax_rows()?;
                let n = v.l2_normalize_rows()?.mean_rows()?;
                let g = v.gather(vec![0, 5, 5, 11], &[2, 2])?;
                let cat = crate::tensor::Var::concat_rows(&[s, g])?;
                Ok(cat.mul(&cat)?.sum().add(&n.sum())?.affine(2.0, 1.0))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "err = {err}");
    }
}
