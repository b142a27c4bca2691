use super::{numel, Result, Tensor, TensorError};

/// For a broadcast operand, maps each output element to its source element.
/// `None` means the shapes already agree.
fn broadcast_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let rank = out.len();
    let mut src_strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        src_strides[d] = if src[d] == 1 { 0 } else { acc };
        acc *= src[d];
    }
    let mut map = Vec::with_capacity(numel(out));
    let mut idx = vec![0usize; rank];
    for _ in 0..numel(out) {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(map)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(mismatch()),
        })
        .collect()
}

fn reduce_to(map: &Option<Vec<usize>>, len: usize, g: impl Iterator<Item = f64>) -> Vec<f64> {
    match map {
        None => g.collect(),
        Some(m) => {
            let mut out = vec![0.0; len];
            for (i, v) in g.enumerate() {
                out[m[i]] += v;
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) sizes.
pub(crate) fn axis_split(
    op: &'static str,
    shape: &[usize],
    axis: usize,
) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::AxisOutOfRange {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: Binary) -> Result<Tensor> {
        let out_shape = broadcast_shape(op.name(), self.shape(), other.shape())?;
        let map_a = broadcast_map(self.shape(), &out_shape);
        let map_b = broadcast_map(other.shape(), &out_shape);
        let n = numel(&out_shape);
        let (a, b) = (self.data(), other.data());
        let data: Vec<f64> = match (&map_a, &map_b) {
            (None, None) => a.iter().zip(b).map(|(&x, &y)| op.apply(x, y)).collect(),
            _ => (0..n)
                .map(|i| {
                    let x = a[map_a.as_ref().map_or(i, |m| m[i])];
                    let y = b[map_b.as_ref().map_or(i, |m| m[i])];
                    op.apply(x, y)
                })
                .collect(),
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            op.name(),
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let at = |m: &Option<Vec<usize>>, d: &[f64], i: usize| d[m.as_ref().map_or(i, |m| m[i])];
                let (a, b) = (lhs.data(), rhs.data());
                let ga = needs[0].then(|| {
                    let it = g.iter().enumerate().map(|(i, &gi)| match op {
                        Binary::Add | Binary::Sub => gi,
                        Binary::Mul => gi * at(&map_b, b, i),
                        Binary::Div => gi / at(&map_b, b, i),
                    });
                    reduce_to(&map_a, a.len(), it)
                });
                let gb = needs[1].then(|| {
                    let it = g.iter().enumerate().map(|(i, &gi)| match op {
                        Binary::Add => gi,
                        Binary::Sub => -gi,
                        Binary::Mul => gi * at(&map_a, a, i),
                        Binary::Div => {
                            let bv = at(&map_b, b, i);
                            -gi * at(&map_a, a, i) / (bv * bv)
                        }
                    });
                    reduce_to(&map_b, b.len(), it)
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Elementwise sum. `other` may broadcast along size-1 dimensions.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Binary::Div)
    }

    /// Applies `f` elementwise; `df(x, y)` is the derivative given input and output.
    fn unary(&self, name: &'static str, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let out = data.clone();
        Tensor::from_op(
            name,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(input.data())
                    .zip(&out)
                    .map(|((&gi, &x), &y)| gi * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    /// Rectified linear unit; the subgradient at zero is zero.
    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * k).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * k).collect())]),
        )
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + k).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        Tensor::from_op(
            "sum",
            Vec::new(),
            vec![self.data().iter().sum()],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let (outer, extent, inner) = axis_split("sum_axis", self.shape(), axis)?;
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let src = &x[(o * extent + a) * inner..][..inner];
                out[o * inner..][..inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(d, s)| *d += s);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(
            "sum_axis",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for a in 0..extent {
                        gx[(o * extent + a) * inner..][..inner].copy_from_slice(&g[o * inner..][..inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let extent = *self.shape().get(axis).ok_or_else(|| TensorError::AxisOutOfRange {
            op: "mean_axis",
            axis,
            shape: self.shape().to_vec(),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / extent.max(1) as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: self.numel(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let rank = first.rank();
        let mut shape = first.shape().to_vec();
        let (outer, _, inner) = axis_split("concat", &shape, axis)?;
        let mut extents = Vec::with_capacity(parts.len());
        for p in parts {
            let same_elsewhere = p.rank() == rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !same_elsewhere {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            extents.push(p.shape()[axis]);
        }
        let total: usize = extents.iter().sum();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                data.extend_from_slice(&p.data()[o * e * inner..][..e * inner]);
            }
        }
        Ok(Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut offset = 0;
                extents
                    .iter()
                    .zip(needs)
                    .map(|(&e, &need)| {
                        let start = offset;
                        offset += e;
                        need.then(|| {
                            let mut gp = Vec::with_capacity(outer * e * inner);
                            for o in 0..outer {
                                gp.extend_from_slice(&g[(o * total + start) * inner..][..e * inner]);
                            }
                            gp
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, extent, inner) = axis_split("narrow", self.shape(), axis)?;
        if start + len > extent {
            return Err(TensorError::RangeOutOfBounds {
                op: "narrow",
                start,
                end: start + len,
                extent,
            });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data()[(o * extent + start) * inner..][..len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            "narrow",
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    gx[(o * extent + start) * inner..][..len * inner]
                        .copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Transpose of a matrix.
    pub fn transpose(&self) -> Result<Tensor> {
        let [r, c] = *self.shape() else {
            return Err(TensorError::RankMismatch {
                op: "transpose",
                expected: 2,
                got: self.shape().to_vec(),
            });
        };
        let data = transpose_data(self.data(), r, c);
        Ok(Tensor::from_op(
            "transpose",
            vec![c, r],
            data,
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(transpose_data(g, c, r))]),
        ))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let data = matmul_data(self.data(), other.data(), m, k, n);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                // dA = G B^T, dB = A^T G
                let ga = needs[0].then(|| {
                    let mut out = vec![0.0; m * k];
                    gemm_acc(Mat::rows(g, n), Mat::t(b.data(), n), &mut out, m, n, k);
                    out
                });
                let gb = needs[1].then(|| {
                    let mut out = vec![0.0; k * n];
                    gemm_acc(Mat::t(a.data(), k), Mat::rows(g, n), &mut out, k, m, n);
                    out
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Numerically stabilised softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, extent, inner) = axis_split("softmax", self.shape(), axis)?;
        if !self.all_finite() {
            return Err(TensorError::NonFinite("softmax"));
        }
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * extent + a) * inner + i;
                let max = (0..extent).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..extent {
                    let e = (x[idx(a)] - max).exp();
                    y[idx(a)] = e;
                    z += e;
                }
                for a in 0..extent {
                    y[idx(a)] /= z;
                }
            }
        }
        let out = y.clone();
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * extent + a) * inner + i;
                        let dot: f64 = (0..extent).map(|a| out[idx(a)] * g[idx(a)]).sum();
                        for a in 0..extent {
                            gx[idx(a)] = out[idx(a)] * (g[idx(a)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Numerically stabilised log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, extent, inner) = axis_split("log_softmax", self.shape(), axis)?;
        if !self.all_finite() {
            return Err(TensorError::NonFinite("log_softmax"));
        }
        let x = self.data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * extent + a) * inner + i;
                let max = (0..extent).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..extent).map(|a| (x[idx(a)] - max).exp()).sum::<f64>().ln();
                for a in 0..extent {
                    y[idx(a)] = x[idx(a)] - lse;
                }
            }
        }
        let out = y.clone();
        Ok(Tensor::from_op(
            "log_softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * extent + a) * inner + i;
                        let gsum: f64 = (0..extent).map(|a| g[idx(a)]).sum();
                        for a in 0..extent {
                            gx[idx(a)] = g[idx(a)] - out[idx(a)].exp() * gsum;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn transpose_data(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// A matrix view: data plus row and column strides, so transposes cost nothing.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    /// Row-major `rows x cols`.
    pub fn rows(data: &'a [f64], cols: usize) -> Mat<'a> {
        Mat { data, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn t(data: &'a [f64], cols: usize) -> Mat<'a> {
        Mat { data, rs: 1, cs: cols }
    }
}

/// `c += a b` with `a` of shape `[m, k]`, `b` of shape `[k, n]` and `c` row-major `[m, n]`.
pub(crate) fn gemm_acc(a: Mat, b: Mat, c: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |mat: Mat, r: usize, cidx: usize| (r - 1) * mat.rs + (cidx - 1) * mat.cs;
    assert!(last(a, m, k) < a.data.len() && last(b, k, n) < b.data.len() && c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major `[m, k] x [k, n]`.
pub(crate) fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm_acc(Mat::rows(a, k), Mat::rows(b, n), &mut out, m, k, n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_definitions() {
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn broadcast_over_leading_and_trailing_unit_dims() {
        let x = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let map = t(&[1, 2, 2], &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(x.mul(&map).unwrap().data(), &[1.0, 0.0, 0.0, 8.0, 5.0, 0.0, 0.0, 16.0]);
        let bias = t(&[2, 1, 1], &[10.0, 20.0]);
        assert_eq!(
            x.add(&bias).unwrap().data(),
            &[11.0, 12.0, 13.0, 14.0, 25.0, 26.0, 27.0, 28.0]
        );
    }

    #[test]
    fn broadcast_rejects_incompatible() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(matches!(a.add(&b), Err(TensorError::ShapeMismatch { .. })));
        assert!(a.add(&Tensor::zeros(&[6])).is_err());
    }

    #[test]
    fn broadcast_grad_reduces() {
        let x = Tensor::param(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::param(&[2, 1], vec![0.5, 0.5]).unwrap();
        x.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
        assert_eq!(x.grad().unwrap(), vec![0.5; 6]);
    }

    #[test]
    fn softmax_examples() {
        let s = t(&[2], &[0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[2], &[1000.0, 1000.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = t(&[2], &[0.0, 3f64.ln()]).softmax(0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(t(&[2], &[f64::NAN, 0.0]).softmax(0).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.7).sin() * 5.0);
        for axis in 0..2 {
            let s = x.softmax(axis).unwrap();
            let sums = s.sum_axis(axis).unwrap();
            assert!(sums.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn concat_and_narrow_invert() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[2, 2], |i| 10.0 + i as f64);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 3.0, 4.0, 5.0, 12.0, 13.0]);
        assert_eq!(c.narrow(1, 0, 3).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 3, 2).unwrap().data(), b.data());
        assert!(c.narrow(1, 4, 2).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
        assert!(b.matmul(&b).is_err());
    }
}
