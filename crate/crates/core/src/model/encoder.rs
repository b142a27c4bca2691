use rand::Rng;

use super::blocks::{ChannelAttention, ResBlock};
use super::{GsfmConfig, ModelError, Result};
use crate::nn::{join, Conv2d, Module};
use crate::spectral::{FrequencyFilter, SpectralFilterModule};
use crate::tensor::{Tensor, TensorError};

/// Key-encoder outputs for one frame. The key doubles as the memory key
/// when the frame is memorised.
#[derive(Clone, Debug)]
pub struct KeyFeatures {
    /// `[C_k, H/4, W/4]`
    pub key: Tensor,
    /// Last-stage features `[4b, H/4, W/4]`, after the encoder filter module.
    pub f16: Tensor,
    /// Skip features `[2b, H/2, W/2]`.
    pub f32: Tensor,
    /// Skip features `[b, H, W]`.
    pub f64: Tensor,
}

/// Three conv stages with 2x average pooling in between.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stage1: Conv2d,
    pub stage2: Conv2d,
    pub stage3: Conv2d,
}

impl Backbone {
    pub fn new(c_in: usize, base: usize, rng: &mut impl Rng) -> Backbone {
        Backbone {
            stage1: Conv2d::new(c_in, base, 3, rng),
            stage2: Conv2d::new(base, 2 * base, 3, rng),
            stage3: Conv2d::new(2 * base, 4 * base, 3, rng),
        }
    }

    /// Returns stage outputs at full, half and quarter resolution.
    pub fn forward(&self, x: &Tensor) -> Result<[Tensor; 3]> {
        let s1 = self.stage1.forward(x)?.relu();
        let s2 = self.stage2.forward(&s1.avg_pool2x()?)?.relu();
        let s3 = self.stage3.forward(&s2.avg_pool2x()?)?.relu();
        Ok([s1, s2, s3])
    }
}

impl Module for Backbone {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.stage1.visit_params(&join(prefix, "stage1"), f);
        self.stage2.visit_params(&join(prefix, "stage2"), f);
        self.stage3.visit_params(&join(prefix, "stage3"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.stage1.visit_params_mut(&join(prefix, "stage1"), f);
        self.stage2.visit_params_mut(&join(prefix, "stage2"), f);
        self.stage3.visit_params_mut(&join(prefix, "stage3"), f);
    }
}

fn encoder_filter(config: &GsfmConfig, channels: usize, rng: &mut impl Rng) -> Result<Option<SpectralFilterModule>> {
    config
        .lfm
        .map(|mode| Ok(SpectralFilterModule::new(channels, FrequencyFilter::new(mode, config.lfm_sigma)?, rng)))
        .transpose()
}

#[derive(Clone, Debug)]
pub struct KeyEncoder {
    pub backbone: Backbone,
    pub lfm: Option<SpectralFilterModule>,
    pub key_proj: Conv2d,
}

impl KeyEncoder {
    pub fn new(config: &GsfmConfig, rng: &mut impl Rng) -> Result<KeyEncoder> {
        let b = config.base_channels;
        Ok(KeyEncoder {
            backbone: Backbone::new(3, b, rng),
            lfm: encoder_filter(config, 4 * b, rng)?,
            key_proj: Conv2d::new(4 * b, config.key_channels, 1, rng),
        })
    }

    pub fn forward(&self, frame: &Tensor) -> Result<KeyFeatures> {
        let [f64, f32, mut f16] = self.backbone.forward(&frame.add_scalar(-0.5))?;
        if let Some(lfm) = &self.lfm {
            f16 = lfm.forward(&f16)?;
        }
        Ok(KeyFeatures {
            key: self.key_proj.forward(&f16)?,
            f16,
            f32,
            f64,
        })
    }
}

impl Module for KeyEncoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.backbone.visit_params(&join(prefix, "backbone"), f);
        self.lfm.visit_params(&join(prefix, "lfm"), f);
        self.key_proj.visit_params(&join(prefix, "key_proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.backbone.visit_params_mut(&join(prefix, "backbone"), f);
        self.lfm.visit_params_mut(&join(prefix, "lfm"), f);
        self.key_proj.visit_params_mut(&join(prefix, "key_proj"), f);
    }
}

/// Encodes a frame with one object's mask into memory values, reusing the
/// frame's last-stage key-encoder features.
#[derive(Clone, Debug)]
pub struct ValueEncoder {
    pub backbone: Backbone,
    /// `None` when the encoder filter is off or shared with the key encoder.
    pub lfm: Option<SpectralFilterModule>,
    pub fuse: Conv2d,
    pub res1: ResBlock,
    pub res2: ResBlock,
    pub attention: ChannelAttention,
}

impl ValueEncoder {
    pub fn new(config: &GsfmConfig, rng: &mut impl Rng) -> Result<ValueEncoder> {
        let b = config.base_channels;
        let c = config.value_channels;
        let backbone = Backbone::new(4, b, rng);
        let lfm = if config.share_lfm { None } else { encoder_filter(config, 4 * b, rng)? };
        Ok(ValueEncoder {
            backbone,
            lfm,
            fuse: Conv2d::new(8 * b, c, 1, rng),
            res1: ResBlock::new(c, rng),
            res2: ResBlock::new(c, rng),
            attention: ChannelAttention::new(c, 4, rng),
        })
    }

    pub fn forward(&self, frame: &Tensor, mask: &Tensor, key: &KeyFeatures, shared_lfm: Option<&SpectralFilterModule>) -> Result<Tensor> {
        if mask.shape().len() != 3 || mask.shape()[0] != 1 || mask.shape()[1..] != frame.shape()[1..] {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "encode_value",
                lhs: frame.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            }));
        }
        let x = Tensor::concat(&[frame.add_scalar(-0.5), mask.add_scalar(-0.5)], 0)?;
        let [_, _, mut f16] = self.backbone.forward(&x)?;
        if let Some(lfm) = self.lfm.as_ref().or(shared_lfm) {
            f16 = lfm.forward(&f16)?;
        }
        let v = self.fuse.forward(&Tensor::concat(&[f16, key.f16.clone()], 0)?)?;
        let v = self.res2.forward(&self.res1.forward(&v)?)?;
        Ok(self.attention.forward(&v)?)
    }
}

impl Module for ValueEncoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.backbone.visit_params(&join(prefix, "backbone"), f);
        self.lfm.visit_params(&join(prefix, "lfm"), f);
        self.fuse.visit_params(&join(prefix, "fuse"), f);
        self.res1.visit_params(&join(prefix, "res1"), f);
        self.res2.visit_params(&join(prefix, "res2"), f);
        self.attention.visit_params(&join(prefix, "attention"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.backbone.visit_params_mut(&join(prefix, "backbone"), f);
        self.lfm.visit_params_mut(&join(prefix, "lfm"), f);
        self.fuse.visit_params_mut(&join(prefix, "fuse"), f);
        self.res1.visit_params_mut(&join(prefix, "res1"), f);
        self.res2.visit_params_mut(&join(prefix, "res2"), f);
        self.attention.visit_params_mut(&join(prefix, "attention"), f);
    }
}
