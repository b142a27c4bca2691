//! Complex FFT kernels on split real/imaginary buffers.
//!
//! Power-of-two lengths use an iterative radix-2 decimation-in-time
//! transform; other lengths fall back to the direct O(n²) sum. Both
//! directions are unnormalised: the caller applies `1 / n` where needed.

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Kernel `exp(-2πi kn / N)`.
    Forward,
    /// Kernel `exp(+2πi kn / N)`, unscaled.
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

/// Precomputed twiddles and permutation for one transform length.
pub struct FftPlan {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    bitrev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> FftPlan {
        let radix2 = n.is_power_of_two();
        let (cos, sin) = if radix2 {
            (0..n / 2)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / n as f64;
                    (a.cos(), a.sin())
                })
                .unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let bitrev = if radix2 && n > 1 {
            let bits = n.trailing_zeros();
            (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect()
        } else {
            Vec::new()
        };
        FftPlan { n, cos, sin, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_radix2(&self) -> bool {
        self.n.is_power_of_two()
    }

    /// Transforms one sequence in place.
    pub fn process(&self, re: &mut [f64], im: &mut [f64], dir: Direction) {
        assert_eq!(re.len(), self.n);
        assert_eq!(im.len(), self.n);
        if self.n <= 1 {
            return;
        }
        if self.is_radix2() {
            self.radix2(re, im, dir);
        } else {
            let (r, i) = naive_dft(re, im, dir);
            re.copy_from_slice(&r);
            im.copy_from_slice(&i);
        }
    }

    fn radix2(&self, re: &mut [f64], im: &mut [f64], dir: Direction) {
        let n = self.n;
        for (i, &j) in self.bitrev.iter().enumerate() {
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = dir.sign();
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * stride], sign * self.sin[k * stride]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = wr * re[b] - wi * im[b];
                    let ti = wr * im[b] + wi * re[b];
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

/// Direct evaluation of the (unnormalised) discrete Fourier sum.
pub fn naive_dft(re: &[f64], im: &[f64], dir: Direction) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let sign = dir.sign();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let (mut sr, mut si) = (0.0, 0.0);
        for t in 0..n {
            // reduce kt mod n first to keep the angle small
            let a = sign * 2.0 * PI * ((k * t) % n) as f64 / n as f64;
            let (c, s) = (a.cos(), a.sin());
            sr += re[t] * c - im[t] * s;
            si += re[t] * s + im[t] * c;
        }
        out_re[k] = sr;
        out_im[k] = si;
    }
    (out_re, out_im)
}

/// Row-column 2D transform of `channels` planes of size `h x w`, in place.
pub fn fft2_in_place(re: &mut [f64], im: &mut [f64], channels: usize, h: usize, w: usize, dir: Direction) {
    assert_eq!(re.len(), channels * h * w);
    assert_eq!(im.len(), channels * h * w);
    let row_plan = FftPlan::new(w);
    let col_plan = FftPlan::new(h);
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..h {
            let s = base + y * w;
            row_plan.process(&mut re[s..s + w], &mut im[s..s + w], dir);
        }
        for x in 0..w {
            for y in 0..h {
                col_re[y] = re[base + y * w + x];
                col_im[y] = im[base + y * w + x];
            }
            col_plan.process(&mut col_re, &mut col_im, dir);
            for y in 0..h {
                re[base + y * w + x] = col_re[y];
                im[base + y * w + x] = col_im[y];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radix2_matches_direct_sum_on_small_sizes() {
        for n in [1usize, 2, 4, 8, 16] {
            let re: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin()).collect();
            let im: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
            for dir in [Direction::Forward, Direction::Inverse] {
                let (er, ei) = naive_dft(&re, &im, dir);
                let (mut r, mut i) = (re.clone(), im.clone());
                FftPlan::new(n).process(&mut r, &mut i, dir);
                for k in 0..n {
                    assert!((r[k] - er[k]).abs() < 1e-12 && (i[k] - ei[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_power_of_two_uses_direct_path() {
        let plan = FftPlan::new(6);
        assert!(!plan.is_radix2());
        let mut re = vec![1.0; 6];
        let mut im = vec![0.0; 6];
        plan.process(&mut re, &mut im, Direction::Forward);
        assert!((re[0] - 6.0).abs() < 1e-12);
        assert!(re[1..].iter().chain(&im).all(|v| v.abs() < 1e-12));
    }
}
