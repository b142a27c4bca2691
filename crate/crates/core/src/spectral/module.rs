use rand::Rng;

use super::{dft2, idft2_real_part, pack_complex, unpack_complex, FilterMode, FrequencyFilter, Result};
use crate::nn::{join, Conv2d, Module};
use crate::tensor::Tensor;

/// Residual spectral block: FFT, frequency mask, two pointwise convolutions
/// over the concatenated real/imaginary channels, inverse FFT, skip add.
///
/// With a low-pass filter this is the encoder-side module; with a high-pass
/// filter it is the decoder-side module. The inverse transform keeps the real
/// component, since the pointwise updates do not preserve conjugate symmetry.
#[derive(Clone, Debug)]
pub struct SpectralFilterModule {
    pub filter: FrequencyFilter,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl SpectralFilterModule {
    pub fn new(channels: usize, filter: FrequencyFilter, rng: &mut impl Rng) -> SpectralFilterModule {
        SpectralFilterModule {
            filter,
            conv1: Conv2d::new(2 * channels, 2 * channels, 1, rng),
            conv2: Conv2d::new(2 * channels, 2 * channels, 1, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels() / 2
    }

    pub fn mode(&self) -> FilterMode {
        self.filter.mode
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let [_, h, w] = *x.shape() else {
            return Err(crate::tensor::TensorError::RankMismatch {
                op: "spectral_filter",
                expected: 3,
                got: x.shape().to_vec(),
            }
            .into());
        };
        let spectrum = dft2(x)?.scale_by(&self.filter.coefficient_map(h, w)?)?;
        let t = pack_complex(&spectrum)?;
        let t = self.conv1.forward(&t)?.relu();
        let t = self.conv2.forward(&t)?;
        let update = idft2_real_part(&unpack_complex(&t)?)?;
        Ok(update.add(x)?)
    }
}

impl Module for SpectralFilterModule {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
    }
}
