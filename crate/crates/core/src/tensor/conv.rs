use serde::{Deserialize, Serialize};

use super::ops::{gemm_acc, Mat};
use super::{Result, Tensor, TensorError};

/// Border handling for same-size convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero,
    Replicate,
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: Padding,
}

/// For kernel offset `d` along an axis of length `n`, the output range whose
/// sources `i + d` fall inside `0..n`.
fn valid_range(d: isize, n: usize) -> (usize, usize) {
    let n = n as isize;
    let lo = (-d).clamp(0, n);
    let hi = (n - d).clamp(lo, n);
    (lo as usize, hi as usize)
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Calls `f(row, y, src_row)` for every column-matrix row (one per input
    /// channel and tap) and output row `y`; `src_row` is `None` for zero padding
    /// outside the image.
    fn for_each_row(&self, mut f: impl FnMut(usize, isize, usize, Option<usize>)) {
        let half = (self.k / 2) as isize;
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dy = ky as isize - half;
                    let dx = kx as isize - half;
                    for y in 0..self.h {
                        let sy = y as isize + dy;
                        let src = if (0..self.h as isize).contains(&sy) {
                            Some(sy as usize)
                        } else {
                            match self.padding {
                                Padding::Zero => None,
                                Padding::Replicate => Some(sy.clamp(0, self.h as isize - 1) as usize),
                            }
                        };
                        f(row, dx, y, src.map(|r| ci * self.hw() + r * self.w));
                    }
                }
            }
        }
    }

    /// Unfolds `[C_in, H, W]` into `[C_in k k, H W]`.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (w, hw) = (self.w, self.hw());
        let mut col = vec![0.0; self.cin * self.k * self.k * hw];
        self.for_each_row(|row, dx, y, src| {
            let Some(start) = src else { return };
            let src = &x[start..][..w];
            let dst = &mut col[row * hw + y * w..][..w];
            let (lo, hi) = valid_range(dx, w);
            let s0 = (lo as isize + dx) as usize;
            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
            if self.padding == Padding::Replicate {
                dst[..lo].fill(src[0]);
                dst[hi..].fill(src[w - 1]);
            }
        });
        col
    }

    /// Adjoint of [`ConvGeom::im2col`]: folds `[C_in k k, H W]` back onto `[C_in, H, W]`.
    fn col2im(&self, col: &[f64]) -> Vec<f64> {
        let (w, hw) = (self.w, self.hw());
        let mut x = vec![0.0; self.cin * hw];
        self.for_each_row(|row, dx, y, src| {
            let Some(start) = src else { return };
            let from = &col[row * hw + y * w..][..w];
            let dst = &mut x[start..][..w];
            let (lo, hi) = valid_range(dx, w);
            let s0 = (lo as isize + dx) as usize;
            dst[s0..s0 + (hi - lo)].iter_mut().zip(&from[lo..hi]).for_each(|(d, v)| *d += v);
            if self.padding == Padding::Replicate {
                dst[0] += from[..lo].iter().sum::<f64>();
                dst[w - 1] += from[hi..].iter().sum::<f64>();
            }
        });
        x
    }
}

fn conv_forward(x: &[f64], kernel: &[f64], g: ConvGeom) -> Vec<f64> {
    let (rows, hw) = (g.cin * g.k * g.k, g.hw());
    let mut out = vec![0.0; g.cout * hw];
    if g.k == 1 {
        gemm_acc(Mat::rows(kernel, rows), Mat::rows(x, hw), &mut out, g.cout, rows, hw);
    } else {
        let col = g.im2col(x);
        gemm_acc(Mat::rows(kernel, rows), Mat::rows(&col, hw), &mut out, g.cout, rows, hw);
    }
    out
}

fn conv_grad_input(gout: &[f64], kernel: &[f64], g: ConvGeom) -> Vec<f64> {
    let (rows, hw) = (g.cin * g.k * g.k, g.hw());
    let mut gcol = vec![0.0; rows * hw];
    gemm_acc(Mat::t(kernel, rows), Mat::rows(gout, hw), &mut gcol, rows, g.cout, hw);
    if g.k == 1 {
        gcol
    } else {
        g.col2im(&gcol)
    }
}

fn conv_grad_kernel(gout: &[f64], x: &[f64], g: ConvGeom) -> Vec<f64> {
    let (rows, hw) = (g.cin * g.k * g.k, g.hw());
    let mut gk = vec![0.0; g.cout * rows];
    if g.k == 1 {
        gemm_acc(Mat::rows(gout, hw), Mat::t(x, hw), &mut gk, g.cout, hw, rows);
    } else {
        let col = g.im2col(x);
        gemm_acc(Mat::rows(gout, hw), Mat::t(&col, hw), &mut gk, g.cout, hw, rows);
    }
    gk
}

fn bilinear_table(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn expect_chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::RankMismatch {
            op,
            expected: 3,
            got: t.shape().to_vec(),
        }),
    }
}

impl Tensor {
    /// Same-size 2D cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`, k in {1, 3}.
    pub fn conv2d(&self, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
        let (cin, h, w) = expect_chw("conv2d", self)?;
        let &[cout, kcin, k, k2] = kernel.shape() else {
            return Err(TensorError::RankMismatch {
                op: "conv2d",
                expected: 4,
                got: kernel.shape().to_vec(),
            });
        };
        if k != k2 || !(k == 1 || k == 3) {
            return Err(TensorError::UnsupportedKernel(k.max(k2)));
        }
        if kcin != cin {
            return Err(TensorError::ChannelMismatch {
                op: "conv2d",
                expected: kcin,
                got: cin,
            });
        }
        let geom = ConvGeom {
            cin,
            cout,
            h,
            w,
            k,
            padding,
        };
        let data = conv_forward(self.data(), kernel.data(), geom);
        let (input, kern) = (self.clone(), kernel.clone());
        Ok(Tensor::from_op(
            "conv2d",
            vec![cout, h, w],
            data,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| conv_grad_input(g, kern.data(), geom)),
                    needs[1].then(|| conv_grad_kernel(g, input.data(), geom)),
                ]
            }),
        ))
    }

    /// 2x2 average pooling with stride 2; H and W must be even.
    pub fn avg_pool2x(&self) -> Result<Tensor> {
        let (c, h, w) = expect_chw("avg_pool2x", self)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Invalid(format!(
                "avg_pool2x needs even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xo;
                    out[(ch * oh + y) * ow + xo] = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        Ok(Tensor::from_op(
            "avg_pool2x",
            vec![c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for xo in 0..ow {
                            let v = 0.25 * g[(ch * oh + y) * ow + xo];
                            let base = ch * h * w + 2 * y * w + 2 * xo;
                            for off in [0, 1, w, w + 1] {
                                gx[base + off] = v;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Bilinear 2x upsampling with the half-pixel (align-corners = false) convention.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let (c, h, w) = expect_chw("upsample2x", self)?;
        if h == 0 || w == 0 {
            return Ok(Tensor::zeros(&[c, 2 * h, 2 * w]));
        }
        let (ty, tx) = (bilinear_table(h), bilinear_table(w));
        let (oh, ow) = (2 * h, 2 * w);
        let x = self.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &x[ch * h * w..][..h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = (1.0 - lx) * plane[y0 * w + x0] + lx * plane[y0 * w + x1];
                    let bot = (1.0 - lx) * plane[y1 * w + x0] + lx * plane[y1 * w + x1];
                    out[(ch * oh + oy) * ow + ox] = (1.0 - ly) * top + ly * bot;
                }
            }
        }
        Ok(Tensor::from_op(
            "upsample2x",
            vec![c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    let plane = &mut gx[ch * h * w..][..h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let v = g[(ch * oh + oy) * ow + ox];
                            plane[y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * v;
                            plane[y0 * w + x1] += (1.0 - ly) * lx * v;
                            plane[y1 * w + x0] += ly * (1.0 - lx) * v;
                            plane[y1 * w + x1] += ly * lx * v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
