use rand::Rng;

use super::blocks::RefineBlock;
use super::encoder::KeyFeatures;
use super::{GsfmConfig, Result};
use crate::boundary::FusionBlock;
use crate::nn::{join, Conv2d, Module};
use crate::spectral::{FrequencyFilter, SpectralFilterModule};
use crate::tensor::Tensor;

const HEAD_INIT_SCALE: f64 = 0.1;

/// Per-object decoder output at input resolution.
#[derive(Clone, Debug)]
pub struct SegmentationOutput {
    /// `[2, H, W]`: a constant zero background logit and the object logit.
    pub mask_logits: Tensor,
    /// `[1, H, W]`, absent when the boundary branch is disabled.
    pub boundary_logits: Option<Tensor>,
}

impl SegmentationOutput {
    /// Object logit `[1, H, W]`.
    pub fn object_logit(&self) -> crate::tensor::Result<Tensor> {
        self.mask_logits.narrow(0, 1, 1)
    }

    /// Object probability `[1, H, W]`, the softmax over the two logits.
    pub fn probability(&self) -> crate::tensor::Result<Tensor> {
        Ok(self.object_logit()?.sigmoid())
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryBranch {
    pub conv: Conv2d,
    pub m2b: FusionBlock,
    pub b2m: FusionBlock,
    pub head: Conv2d,
}

impl Module for BoundaryBranch {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.m2b.visit_params(&join(prefix, "m2b"), f);
        self.b2m.visit_params(&join(prefix, "b2m"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
        self.m2b.visit_params_mut(&join(prefix, "m2b"), f);
        self.b2m.visit_params_mut(&join(prefix, "b2m"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

/// Memory readout and query features in, mask and boundary logits out.
///
/// The decoder filter module sits on the boundary-branch input, or on the
/// mask-branch input when the boundary branch is disabled.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub compress: Conv2d,
    pub refine1: RefineBlock,
    pub refine2: RefineBlock,
    pub hfm: Option<SpectralFilterModule>,
    pub mask_conv: Conv2d,
    pub mask_head: Conv2d,
    pub boundary: Option<BoundaryBranch>,
}

impl Decoder {
    pub fn new(config: &GsfmConfig, rng: &mut impl Rng) -> Result<Decoder> {
        let b = config.base_channels;
        let hfm = config
            .hfm
            .map(|mode| Ok::<_, super::ModelError>(SpectralFilterModule::new(b, FrequencyFilter::new(mode, config.hfm_sigma)?, rng)))
            .transpose()?;
        let compress = Conv2d::new(config.value_channels + 4 * b, 4 * b, 3, rng);
        let refine1 = RefineBlock::new(4 * b, 2 * b, 2 * b, rng);
        let refine2 = RefineBlock::new(2 * b, b, b, rng);
        let mask_conv = Conv2d::new(b, b, 3, rng);
        // Heads start with small weights so initial logits stay near zero.
        let mut mask_head = Conv2d::new(b, 1, 3, rng);
        mask_head.scale_weights_(HEAD_INIT_SCALE);
        let boundary = config.boundary_branch.then(|| {
            let conv = Conv2d::new(b, b, 3, rng);
            let m2b = FusionBlock::new(b, rng);
            let b2m = FusionBlock::new(b, rng);
            let mut head = Conv2d::new(b, 1, 3, rng);
            head.scale_weights_(HEAD_INIT_SCALE);
            BoundaryBranch { conv, m2b, b2m, head }
        });
        Ok(Decoder {
            compress,
            refine1,
            refine2,
            hfm,
            mask_conv,
            mask_head,
            boundary,
        })
    }

    pub fn forward(&self, readout: &Tensor, query: &KeyFeatures) -> Result<SegmentationOutput> {
        let x = self.compress.forward(&Tensor::concat(&[readout.clone(), query.f16.clone()], 0)?)?.relu();
        let x = self.refine1.forward(&x, &query.f32)?;
        let x = self.refine2.forward(&x, &query.f64)?;
        let hfm = |t: &Tensor| -> Result<Tensor> {
            match &self.hfm {
                Some(m) => Ok(m.forward(t)?),
                None => Ok(t.clone()),
            }
        };
        let (logit, boundary_logits) = match &self.boundary {
            Some(branch) => {
                let f_m = self.mask_conv.forward(&x)?.relu();
                let f_b = branch.conv.forward(&hfm(&x)?)?.relu();
                let f_b = branch.m2b.forward(&f_m, &f_b)?;
                let f_m = branch.b2m.forward(&f_b, &f_m)?;
                (self.mask_head.forward(&f_m)?, Some(branch.head.forward(&f_b)?))
            }
            None => {
                let f_m = self.mask_conv.forward(&hfm(&x)?)?.relu();
                (self.mask_head.forward(&f_m)?, None)
            }
        };
        let zero = Tensor::zeros(logit.shape());
        Ok(SegmentationOutput {
            mask_logits: Tensor::concat(&[zero, logit], 0)?,
            boundary_logits,
        })
    }
}

impl Module for Decoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.compress.visit_params(&join(prefix, "compress"), f);
        self.refine1.visit_params(&join(prefix, "refine1"), f);
        self.refine2.visit_params(&join(prefix, "refine2"), f);
        self.hfm.visit_params(&join(prefix, "hfm"), f);
        self.mask_conv.visit_params(&join(prefix, "mask_conv"), f);
        self.mask_head.visit_params(&join(prefix, "mask_head"), f);
        self.boundary.visit_params(&join(prefix, "boundary"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.compress.visit_params_mut(&join(prefix, "compress"), f);
        self.refine1.visit_params_mut(&join(prefix, "refine1"), f);
        self.refine2.visit_params_mut(&join(prefix, "refine2"), f);
        self.hfm.visit_params_mut(&join(prefix, "hfm"), f);
        self.mask_conv.visit_params_mut(&join(prefix, "mask_conv"), f);
        self.mask_head.visit_params_mut(&join(prefix, "mask_head"), f);
        self.boundary.visit_params_mut(&join(prefix, "boundary"), f);
    }
}
