//! 2-D cross-correlation over NCHW maps via im2col + GEMM.

use super::params::{Bound, ParamId, ParamStore};
use super::init::kaiming_normal;
use crate::error::{Error, Result};
use crate::parallel::{self, Parallelism};
use crate::rng::RngStream;
use crate::tensor::{gemm, Layout, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Dims {
    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }
    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], d: &Dims, cols: &mut [f64]) {
    let hw = d.hw_out();
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = (c * d.k + ki) * d.k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        dst[oy * d.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                            plane[iy as usize * d.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &Dims, dx: &mut [f64]) {
    let hw = d.hw_out();
    for c in 0..d.c {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = (c * d.k + ki) * d.k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.wo {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            plane[iy as usize * d.w + ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation (no kernel flip) of `x: (N,C,H,W)` with
/// `kernel: (O,C,k,k)` plus `bias: (O)`.
pub fn conv2d<'t>(
    x: &Var<'t>,
    kernel: &Var<'t>,
    bias: &Var<'t>,
    geom: ConvGeometry,
    par: Parallelism,
) -> Result<Var<'t>> {
    let (xv, kv, bv) = (x.value(), kernel.value(), bias.value());
    let [n, c, h, w] = xv.dims4("conv2d")?;
    let [o, ck, k, k2] = kv.dims4("conv2d")?;
    if ck != c || k != k2 {
        return Err(Error::shape("conv2d", xv.shape(), kv.shape()));
    }
    if bv.numel() != o {
        return Err(Error::shape("conv2d bias", kv.shape(), bv.shape()));
    }
    let (Some(ho), Some(wo)) = (geom.output_size(h, k), geom.output_size(w, k)) else {
        return Err(Error::Contract(format!(
            "conv2d: kernel {k} does not fit input {h}x{w} with padding {}",
            geom.padding
        )));
    };
    let d = Dims {
        c,
        h,
        w,
        k,
        ho,
        wo,
        stride: geom.stride,
        pad: geom.padding,
    };
    let out_len = o * d.hw_out();
    let mut out = vec![0.0; n * out_len];
    {
        let (xd, kd, bd) = (xv.data(), kv.data(), bv.data());
        let d = &d;
        parallel::for_each_chunk_mut(&mut out, out_len, par, |b, dst| {
            let mut cols = vec![0.0; d.ckk() * d.hw_out()];
            im2col(&xd[b * c * h * w..(b + 1) * c * h * w], d, &mut cols);
            for (oc, row) in dst.chunks_exact_mut(d.hw_out()).enumerate() {
                row.fill(bd[oc]);
            }
            gemm(o, d.ckk(), d.hw_out(), kd, Layout::Normal, &cols, Layout::Normal, dst, 1.0);
        });
    }
    let out = Tensor::new(&[n, o, ho, wo], out)?;

    Ok(x.tape().record(out, &[*x, *kernel, *bias], move |g, needs| {
        let (xd, kd, gd) = (xv.data(), kv.data(), g.data());
        let (need_dx, need_dk) = (needs[0], needs[1]);
        let d = &d;
        let per_sample = parallel::map_indexed(n, par, |b| {
            let gb = &gd[b * out_len..(b + 1) * out_len];
            let mut cols = vec![0.0; d.ckk() * d.hw_out()];
            let dk = need_dk.then(|| {
                im2col(&xd[b * c * h * w..(b + 1) * c * h * w], d, &mut cols);
                let mut dk = vec![0.0; o * d.ckk()];
                gemm(o, d.hw_out(), d.ckk(), gb, Layout::Normal, &cols, Layout::Transposed, &mut dk, 0.0);
                dk
            });
            let dx = need_dx.then(|| {
                gemm(d.ckk(), o, d.hw_out(), kd, Layout::Transposed, gb, Layout::Normal, &mut cols, 0.0);
                let mut dx = vec![0.0; c * h * w];
                col2im(&cols, d, &mut dx);
                dx
            });
            (dk, dx)
        });
        let mut dx_all = needs[0].then(|| Vec::with_capacity(n * c * h * w));
        let mut dk_all = needs[1].then(|| vec![0.0; o * d.ckk()]);
        for (dk, dx) in per_sample {
            if let (Some(acc), Some(dk)) = (dk_all.as_mut(), dk) {
                acc.iter_mut().zip(&dk).for_each(|(a, v)| *a += v);
            }
            if let (Some(acc), Some(dx)) = (dx_all.as_mut(), dx) {
                acc.extend_from_slice(&dx);
            }
        }
        let db = needs[2].then(|| {
            let mut db = vec![0.0; o];
            for b in 0..n {
                for (oc, acc) in db.iter_mut().enumerate() {
                    let start = b * out_len + oc * d.hw_out();
                    *acc += g.data()[start..start + d.hw_out()].iter().sum::<f64>();
                }
            }
            Tensor::new(&[o], db).expect("shape")
        });
        vec![
            dx_all.map(|v| Tensor::new(&[n, c, h, w], v).expect("shape")),
            dk_all.map(|v| Tensor::new(&[o, c, k, k], v).expect("shape")),
            db,
        ]
    }))
}

/// Convolution layer whose weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        geometry: ConvGeometry,
        init: &RngStream,
    ) -> Self {
        let fan_in = in_channels * kernel_size * kernel_size;
        let kernel = store.add(
            format!("{name}.kernel"),
            kaiming_normal(&[out_channels, in_channels, kernel_size, kernel_size], fan_in, init),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            kernel,
            bias,
            geometry,
            in_channels,
            out_channels,
            kernel_size,
        }
    }

    pub fn forward<'t>(&self, x: &Var<'t>, p: &Bound<'t>, par: Parallelism) -> Result<Var<'t>> {
        conv2d(x, &p[self.kernel], &p[self.bias], self.geometry, par)
    }
}
