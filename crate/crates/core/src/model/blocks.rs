use rand::Rng;

use crate::nn::{join, Conv2d, Linear, Module};
use crate::tensor::{Result, Tensor};

/// `x + conv2(relu(conv1(relu(x))))` with 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new(channels: usize, rng: &mut impl Rng) -> ResBlock {
        ResBlock {
            conv1: Conv2d::new(channels, channels, 3, rng),
            conv2: Conv2d::new(channels, channels, 3, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let r = self.conv2.forward(&self.conv1.forward(&x.relu())?.relu())?;
        r.add(x)
    }
}

impl Module for ResBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
    }
}

/// Channel gate: global average pool, two-layer MLP, sigmoid, rescale.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ChannelAttention {
    pub fn new(channels: usize, reduction: usize, rng: &mut impl Rng) -> ChannelAttention {
        let hidden = (channels / reduction.max(1)).max(1);
        ChannelAttention {
            fc1: Linear::new(channels, hidden, rng),
            fc2: Linear::new(hidden, channels, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (c, hw) = (x.shape()[0], x.shape()[1] * x.shape()[2]);
        let pooled = x.reshape(&[c, hw])?.mean_axis(1)?;
        let gate = self.fc2.forward(&self.fc1.forward(&pooled)?.relu())?.sigmoid();
        x.mul(&gate.reshape(&[c, 1, 1])?)
    }
}

impl Module for ChannelAttention {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}

/// Upsampling refinement: `h = skip(s) + up(upsample(x))`, `y = h + out(relu(h))`.
#[derive(Clone, Debug)]
pub struct RefineBlock {
    pub skip: Conv2d,
    pub up: Conv2d,
    pub out: Conv2d,
}

impl RefineBlock {
    pub fn new(c_in: usize, c_skip: usize, c_out: usize, rng: &mut impl Rng) -> RefineBlock {
        RefineBlock {
            skip: Conv2d::new(c_skip, c_out, 3, rng),
            up: Conv2d::new(c_in, c_out, 1, rng),
            out: Conv2d::new(c_out, c_out, 3, rng),
        }
    }

    pub fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let h = self.skip.forward(skip)?.add(&self.up.forward(&x.upsample2x()?)?)?;
        h.add(&self.out.forward(&h.relu())?)
    }
}

impl Module for RefineBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.skip.visit_params(&join(prefix, "skip"), f);
        self.up.visit_params(&join(prefix, "up"), f);
        self.out.visit_params(&join(prefix, "out"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.skip.visit_params_mut(&join(prefix, "skip"), f);
        self.up.visit_params_mut(&join(prefix, "up"), f);
        self.out.visit_params_mut(&join(prefix, "out"), f);
    }
}
