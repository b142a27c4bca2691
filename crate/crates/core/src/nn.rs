//! Small layer building blocks shared by the spectral, boundary and model modules.

use rand::Rng;

use crate::tensor::{Padding, Result, Tensor};

/// Anything owning trainable tensors, addressable by dotted names.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Kaiming-uniform initialised trainable tensor: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::param(shape, data).expect("shape matches generated data")
}

/// Same-size convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, rng: &mut impl Rng) -> Conv2d {
        Conv2d {
            weight: kaiming_uniform(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng),
            bias: Tensor::zeros(&[c_out, 1, 1]).with_grad(),
            padding: Padding::Zero,
        }
    }

    /// Builds a convolution from explicit weights `[c_out, c_in, k, k]` and zero bias.
    pub fn from_weight(weight: Tensor) -> Conv2d {
        let c_out = weight.shape()[0];
        Conv2d {
            weight: weight.with_grad(),
            bias: Tensor::zeros(&[c_out, 1, 1]).with_grad(),
            padding: Padding::Zero,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, self.padding)?.add(&self.bias)
    }

    /// Multiplies the weights by `factor`.
    pub fn scale_weights_(&mut self, factor: f64) {
        self.weight = Tensor::param(self.weight.shape(), self.weight.data().iter().map(|w| w * factor).collect())
            .expect("same shape");
    }

    /// Zeroes weights and bias, making the layer output identically zero.
    pub fn zero_(&mut self) {
        self.weight = Tensor::zeros(self.weight.shape()).with_grad();
        self.bias = Tensor::zeros(self.bias.shape()).with_grad();
    }
}

impl Module for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Fully connected layer acting on column vectors `[in, 1]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Linear {
        Linear {
            weight: kaiming_uniform(&[d_out, d_in], d_in, rng),
            bias: Tensor::zeros(&[d_out, 1]).with_grad(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.weight.matmul(x)?.add(&self.bias)
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

impl<M: Module> Module for Option<M> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        if let Some(m) = self {
            m.visit_params(prefix, f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(m) = self {
            m.visit_params_mut(prefix, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_params_are_named_and_trainable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(2, 3, 3, &mut rng);
        let names: Vec<String> = conv.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["weight", "bias"]);
        assert_eq!(conv.num_params(), 3 * 2 * 9 + 3);
        assert!(conv.weight.requires_grad());
        let bound = (6.0f64 / 18.0).sqrt();
        assert!(conv.weight.data().iter().all(|w| w.abs() <= bound));
    }
}
