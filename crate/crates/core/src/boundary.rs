//! Boundary targets, boundary and mask losses, and the mask/boundary fusion block.

use rand::Rng;

use crate::nn::{join, Conv2d, Module};
use crate::tensor::{Padding, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum BoundaryError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("keep fraction must lie in (0, 1], got {0}")]
    InvalidKeepFraction(f64),
    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("boundary map values must be exactly 0 or 1")]
    NotBinary,
}

pub type Result<T> = std::result::Result<T, BoundaryError>;

/// Default threshold on the absolute Laplacian response.
pub const BOUNDARY_THRESHOLD: f64 = 0.1;
/// Default smoothing term of the dice loss.
pub const DICE_EPS: f64 = 1e-5;

/// A binary `[1, H, W]` boundary map.
#[derive(Clone, Debug)]
pub struct BoundaryMap {
    values: Tensor,
}

impl BoundaryMap {
    pub fn new(values: Tensor) -> Result<BoundaryMap> {
        if !values.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(BoundaryError::NotBinary);
        }
        Ok(BoundaryMap { values: values.detach() })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    pub fn count(&self) -> usize {
        self.values.data().iter().filter(|&&v| v == 1.0).count()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn laplacian_kernel() -> Tensor {
    Tensor::new(&[1, 1, 3, 3], vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).expect("3x3 kernel")
}

/// Marks pixels where the 4-neighbour Laplacian of `mask` exceeds `threshold`
/// in magnitude. Edges use replicate padding, so the frame border never fires.
pub fn laplacian_boundary(mask: &Tensor, threshold: f64) -> Result<BoundaryMap> {
    if mask.rank() != 3 || mask.shape()[0] != 1 {
        return Err(TensorError::RankMismatch {
            op: "laplacian_boundary",
            expected: 3,
            got: mask.shape().to_vec(),
        }
        .into());
    }
    let response = mask.detach().conv2d(&laplacian_kernel(), Padding::Replicate)?;
    let data = response
        .data()
        .iter()
        .map(|r| if r.abs() > threshold { 1.0 } else { 0.0 })
        .collect();
    BoundaryMap::new(Tensor::new(mask.shape(), data)?)
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

/// `1 - 2 Σ p q / (Σ p² + Σ q² + eps)`, differentiable in `p`.
pub fn dice_loss(p: &Tensor, q: &Tensor, eps: f64) -> Result<Tensor> {
    same_shape("dice_loss", p, q)?;
    let q = q.detach();
    let inter = p.mul(&q)?.sum().scale(2.0);
    let q_sq: f64 = q.data().iter().map(|v| v * v).sum();
    let denom = p.square().sum().add_scalar(q_sq + eps);
    Ok(inter.div(&denom)?.neg().add_scalar(1.0))
}

/// Mean binary cross-entropy on logits, `max(x, 0) - x y + ln(1 + e^{-|x|})`.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape("bce_with_logits", logits, target)?;
    let n = logits.numel().max(1) as f64;
    let y = target.to_vec();
    let loss: f64 = logits
        .data()
        .iter()
        .zip(&y)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / n;
    let x = logits.to_vec();
    Ok(Tensor::from_op(
        "bce_with_logits",
        vec![],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |g, _| {
            let s = g[0] / n;
            vec![Some(
                x.iter()
                    .zip(&y)
                    .map(|(&x, &t)| s * (sigmoid(x) - t))
                    .collect(),
            )]
        }),
    ))
}

/// Unweighted sum of dice (on sigmoid probabilities) and BCE (on logits).
pub fn boundary_loss(logits: &Tensor, gt: &BoundaryMap, eps: f64) -> Result<Tensor> {
    let dice = dice_loss(&logits.sigmoid(), gt.values(), eps)?;
    let bce = bce_with_logits(logits, gt.values())?;
    Ok(dice.add(&bce)?)
}

/// Residual fusion `ReLU(conv1x1(src)) + dst`.
#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub proj: Conv2d,
}

impl FusionBlock {
    pub fn new(channels: usize, rng: &mut impl Rng) -> FusionBlock {
        FusionBlock {
            proj: Conv2d::new(channels, channels, 1, rng),
        }
    }

    pub fn forward(&self, src: &Tensor, dst: &Tensor) -> Result<Tensor> {
        fuse(src, dst, self)
    }
}

impl Module for FusionBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.proj.visit_params(&join(prefix, "proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.proj.visit_params_mut(&join(prefix, "proj"), f);
    }
}

pub fn fuse(src: &Tensor, dst: &Tensor, block: &FusionBlock) -> Result<Tensor> {
    same_shape("fuse", src, dst)?;
    Ok(block.proj.forward(src)?.relu().add(dst)?)
}

/// Per-pixel cross-entropy of `[K, H, W]` logits against labels in `0..K`,
/// returned as a flat `[H W]` tensor.
pub fn pixel_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let &[k, h, w] = logits.shape() else {
        return Err(TensorError::RankMismatch {
            op: "pixel_cross_entropy",
            expected: 3,
            got: logits.shape().to_vec(),
        }
        .into());
    };
    let p = h * w;
    if labels.len() != p {
        return Err(BoundaryError::LabelCount { expected: p, got: labels.len() });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(BoundaryError::LabelOutOfRange { label: bad as usize, classes: k });
    }
    let x = logits.data();
    let mut probs = vec![0.0; k * p];
    let mut loss = vec![0.0; p];
    for i in 0..p {
        let max = (0..k).map(|c| x[c * p + i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (x[c * p + i] - max).exp()).sum();
        for c in 0..k {
            probs[c * p + i] = (x[c * p + i] - max).exp() / z;
        }
        loss[i] = max + z.ln() - x[labels[i] as usize * p + i];
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        "pixel_cross_entropy",
        vec![p],
        loss,
        vec![logits.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; k * p];
            for c in 0..k {
                for i in 0..p {
                    let onehot = if labels[i] as usize == c { 1.0 } else { 0.0 };
                    gx[c * p + i] = g[i] * (probs[c * p + i] - onehot);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Mean of the `ceil(fraction · n)` largest entries of a flat tensor, ties to the lower index.
pub fn mean_of_largest(values: &Tensor, fraction: f64) -> Result<Tensor> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BoundaryError::InvalidKeepFraction(fraction));
    }
    let n = values.numel();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1));
    let v = values.data();
    let mut idx: Vec<usize> = (0..n).collect();
    if keep < n {
        idx.select_nth_unstable_by(keep - 1, |a, b| v[*b].total_cmp(&v[*a]).then(a.cmp(b)));
        idx.truncate(keep);
    }
    let mean = idx.iter().map(|&i| v[i]).sum::<f64>() / keep as f64;
    Ok(Tensor::from_op(
        "mean_of_largest",
        vec![],
        vec![mean],
        vec![values.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![0.0; n];
            for &i in &idx {
                gx[i] = g[0] / keep as f64;
            }
            vec![Some(gx)]
        }),
    ))
}

/// Cross-entropy averaged over the hardest `keep_fraction` of pixels.
pub fn bootstrapped_ce(logits: &Tensor, labels: &[u8], keep_fraction: f64) -> Result<Tensor> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(BoundaryError::InvalidKeepFraction(keep_fraction));
    }
    mean_of_largest(&pixel_cross_entropy(logits, labels)?, keep_fraction)
}

/// Linear anneal of the bootstrap keep fraction from `start` to `end` over
/// the first `warmup` share of training, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BootstrapSchedule {
    pub start: f64,
    pub end: f64,
    pub warmup: f64,
}

impl Default for BootstrapSchedule {
    fn default() -> Self {
        BootstrapSchedule {
            start: 1.0,
            end: 0.2,
            warmup: 0.25,
        }
    }
}

impl BootstrapSchedule {
    pub fn keep_fraction(&self, step: usize, total_steps: usize) -> f64 {
        let span = self.warmup * total_steps as f64;
        if span <= 0.0 {
            return self.end;
        }
        let t = (step as f64 / span).min(1.0);
        self.start + (self.end - self.start) * t
    }
}
