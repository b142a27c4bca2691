//! Differentiable 2D Fourier transforms and the spectral filter modules.
//!
//! Spectra are kept uncentred: the DC bin sits at index `(0, 0)` and the
//! highest frequencies sit around the array centre. The forward transform is
//! unnormalised and the inverse carries the `1 / (H W)` factor.

pub mod fft;
mod filter;
mod module;

pub use filter::{build_coefficient_map, FilterMode, FrequencyFilter};
pub use module::SpectralFilterModule;

use crate::tensor::{Tensor, TensorError};
use fft::{fft2_in_place, Direction};

#[derive(Debug, thiserror::Error)]
pub enum SpectralError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot unpack a complex tensor with an odd channel count ({0})")]
    OddChannels(usize),
    #[error("inverse transform left an imaginary residue of {residue:e} (bound {bound:e})")]
    ImaginaryResidue { residue: f64, bound: f64 },
    #[error("cutoff sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

/// Relative bound on the imaginary residue accepted by [`idft2`].
pub const IMAG_RESIDUE_TOLERANCE: f64 = 1e-5;

/// A `[C, H, W]` complex tensor stored as separate real and imaginary parts.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    pub real: Tensor,
    pub imag: Tensor,
}

impl ComplexSpectrum {
    pub fn new(real: Tensor, imag: Tensor) -> Result<ComplexSpectrum> {
        if real.shape() != imag.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "complex_spectrum",
                lhs: real.shape().to_vec(),
                rhs: imag.shape().to_vec(),
            }
            .into());
        }
        Ok(ComplexSpectrum { real, imag })
    }

    pub fn shape(&self) -> &[usize] {
        self.real.shape()
    }

    /// Multiplies real and imaginary parts by the same (broadcast) real mask.
    pub fn scale_by(&self, mask: &Tensor) -> Result<ComplexSpectrum> {
        Ok(ComplexSpectrum {
            real: self.real.mul(mask)?,
            imag: self.imag.mul(mask)?,
        })
    }
}

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::RankMismatch {
            op,
            expected: 3,
            got: t.shape().to_vec(),
        }
        .into()),
    }
}

/// Forward transform of a real `[C, H, W]` tensor into a `[2C, H, W]` tensor
/// holding the real parts followed by the imaginary parts.
fn dft2_packed(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw("dft2", x)?;
    let n = c * h * w;
    let mut re = x.to_vec();
    let mut im = vec![0.0; n];
    fft2_in_place(&mut re, &mut im, c, h, w, Direction::Forward);
    re.extend_from_slice(&im);
    Ok(Tensor::from_op(
        "dft2",
        vec![2 * c, h, w],
        re,
        vec![x.clone()],
        Box::new(move |g, _| {
            // Adjoint of the forward DFT restricted to real inputs:
            // Re(unnormalised inverse DFT of g_re + i g_im).
            let mut gr = g[..n].to_vec();
            let mut gi = g[n..].to_vec();
            fft2_in_place(&mut gr, &mut gi, c, h, w, Direction::Inverse);
            vec![Some(gr)]
        }),
    ))
}

/// Real part of the normalised inverse transform of a packed `[2C, H, W]` tensor.
fn idft2_packed_real(t: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (c2, h, w) = chw("idft2", t)?;
    if c2 % 2 != 0 {
        return Err(SpectralError::OddChannels(c2));
    }
    let c = c2 / 2;
    let n = c * h * w;
    let scale = 1.0 / (h * w) as f64;
    let mut re = t.data()[..n].to_vec();
    let mut im = t.data()[n..].to_vec();
    fft2_in_place(&mut re, &mut im, c, h, w, Direction::Inverse);
    re.iter_mut().for_each(|v| *v *= scale);
    im.iter_mut().for_each(|v| *v *= scale);
    let out = Tensor::from_op(
        "idft2",
        vec![c, h, w],
        re,
        vec![t.clone()],
        Box::new(move |g, _| {
            // d out / d re_k = Re(DFT g)_k / HW, d out / d im_k = Im(DFT g)_k / HW
            let mut gr = g.to_vec();
            let mut gi = vec![0.0; n];
            fft2_in_place(&mut gr, &mut gi, c, h, w, Direction::Forward);
            gr.extend_from_slice(&gi);
            gr.iter_mut().for_each(|v| *v *= scale);
            vec![Some(gr)]
        }),
    );
    Ok((out, im))
}

/// Per-channel 2D DFT of a real `[C, H, W]` tensor.
pub fn dft2(x: &Tensor) -> Result<ComplexSpectrum> {
    unpack_complex(&dft2_packed(x)?)
}

/// Inverse transform of a spectrum that is expected to describe a real signal.
///
/// Fails when the imaginary residue exceeds `1e-5 * max(1, |real|)` anywhere.
pub fn idft2(s: &ComplexSpectrum) -> Result<Tensor> {
    let (out, imag) = idft2_packed_real(&pack_complex(s)?)?;
    let mut worst: Option<(f64, f64)> = None;
    let mut worst_ratio = 1.0;
    for (&r, &i) in out.data().iter().zip(&imag) {
        let bound = IMAG_RESIDUE_TOLERANCE * r.abs().max(1.0);
        let ratio = i.abs() / bound;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst = Some((i.abs(), bound));
        }
    }
    match worst {
        Some((residue, bound)) => Err(SpectralError::ImaginaryResidue { residue, bound }),
        None => Ok(out),
    }
}

/// Inverse transform keeping only the real component, without a residue check.
pub fn idft2_real_part(s: &ComplexSpectrum) -> Result<Tensor> {
    Ok(idft2_packed_real(&pack_complex(s)?)?.0)
}

/// Real parts in the first C channels, imaginary parts in the last C.
pub fn pack_complex(s: &ComplexSpectrum) -> Result<Tensor> {
    Ok(Tensor::concat(&[s.real.clone(), s.imag.clone()], 0)?)
}

pub fn unpack_complex(t: &Tensor) -> Result<ComplexSpectrum> {
    let (c2, _, _) = chw("unpack_complex", t)?;
    if c2 % 2 != 0 {
        return Err(SpectralError::OddChannels(c2));
    }
    let c = c2 / 2;
    Ok(ComplexSpectrum {
        real: t.narrow(0, 0, c)?,
        imag: t.narrow(0, c, c)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_concentrates_in_dc() {
        let c = 0.75;
        let s = dft2(&Tensor::full(&[1, 4, 4], c)).unwrap();
        assert!((s.real.data()[0] - 16.0 * c).abs() < 1e-12);
        assert!(s.real.data()[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(s.imag.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut v = vec![0.0; 8 * 8];
        v[0] = 1.0;
        let s = dft2(&Tensor::new(&[1, 8, 8], v).unwrap()).unwrap();
        assert!(s.real.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(s.imag.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_spectrum_inverts_to_zero() {
        let z = Tensor::zeros(&[2, 4, 6]);
        let out = idft2(&ComplexSpectrum::new(z.clone(), z).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_impulse_round_trips_by_shift_theorem() {
        // A delta at (a, b) has spectrum exp(-2πi (ua/H + vb/W)).
        let (h, w, a, b) = (4usize, 8usize, 1usize, 3usize);
        let mut re = Vec::new();
        let mut im = Vec::new();
        for u in 0..h {
            for v in 0..w {
                let ang = -2.0 * std::f64::consts::PI * ((u * a) as f64 / h as f64 + (v * b) as f64 / w as f64);
                re.push(ang.cos());
                im.push(ang.sin());
            }
        }
        let s = ComplexSpectrum::new(Tensor::new(&[1, h, w], re).unwrap(), Tensor::new(&[1, h, w], im).unwrap()).unwrap();
        let x = idft2(&s).unwrap();
        for (i, &v) in x.data().iter().enumerate() {
            let expect = if i == a * w + b { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "index {i}: {v}");
        }
    }

    #[test]
    fn non_hermitian_spectrum_is_rejected_by_checked_inverse() {
        let mut re = vec![0.0; 16];
        re[1] = 1.0; // single off-axis bin: not conjugate symmetric
        let s = ComplexSpectrum::new(Tensor::new(&[1, 4, 4], re).unwrap(), Tensor::zeros(&[1, 4, 4])).unwrap();
        assert!(matches!(idft2(&s), Err(SpectralError::ImaginaryResidue { .. })));
        assert!(idft2_real_part(&s).is_ok());
    }

    #[test]
    fn pack_layout_and_odd_channel_error() {
        let real = Tensor::from_fn(&[2, 2, 2], |i| i as f64);
        let imag = Tensor::zeros(&[2, 2, 2]);
        let s = ComplexSpectrum::new(real.clone(), imag).unwrap();
        let p = pack_complex(&s).unwrap();
        assert_eq!(p.shape(), &[4, 2, 2]);
        assert_eq!(&p.data()[..8], real.data());
        assert!(p.data()[8..].iter().all(|&v| v == 0.0));
        assert!(matches!(unpack_complex(&Tensor::zeros(&[3, 2, 2])), Err(SpectralError::OddChannels(3))));
    }
}
