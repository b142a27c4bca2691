use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, VideoSample};
use crate::tensor::Tensor;

/// Similarity transform about the image centre:
/// `p' = c + scale · R(angle) · (p - c) + (ty, tx)`, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub angle_deg: f64,
    pub scale: f64,
    pub ty: f64,
    pub tx: f64,
}

/// Bounds of random jitter: rotation in degrees, scale range, and
/// translation as a fraction of the image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_angle_deg: f64,
    pub scale: (f64, f64),
    pub max_shift: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_angle_deg: 15.0,
            scale: (0.9, 1.1),
            max_shift: 0.1,
        }
    }
}

impl AffineParams {
    pub fn identity() -> AffineParams {
        AffineParams {
            angle_deg: 0.0,
            scale: 1.0,
            ty: 0.0,
            tx: 0.0,
        }
    }

    pub fn random(ranges: &AugmentRanges, h: usize, w: usize, rng: &mut impl Rng) -> AffineParams {
        let a = ranges.max_angle_deg;
        let (sy, sx) = (ranges.max_shift * h as f64, ranges.max_shift * w as f64);
        AffineParams {
            angle_deg: if a > 0.0 { rng.gen_range(-a..=a) } else { 0.0 },
            scale: rng.gen_range(ranges.scale.0..=ranges.scale.1),
            ty: if sy > 0.0 { rng.gen_range(-sy..=sy) } else { 0.0 },
            tx: if sx > 0.0 { rng.gen_range(-sx..=sx) } else { 0.0 },
        }
    }

    fn rotate(angle_deg: f64, (y, x): (f64, f64)) -> (f64, f64) {
        let (s, c) = angle_deg.to_radians().sin_cos();
        (s * x + c * y, c * x - s * y)
    }

    /// Maps a point given relative to the image centre.
    pub fn apply_centered(&self, p: (f64, f64)) -> (f64, f64) {
        let (y, x) = Self::rotate(self.angle_deg, p);
        (self.scale * y + self.ty, self.scale * x + self.tx)
    }

    /// The transform undoing `self`.
    pub fn inverse(&self) -> AffineParams {
        let inv_scale = 1.0 / self.scale;
        let (ty, tx) = Self::rotate(-self.angle_deg, (self.ty, self.tx));
        AffineParams {
            angle_deg: -self.angle_deg,
            scale: inv_scale,
            ty: -inv_scale * ty,
            tx: -inv_scale * tx,
        }
    }

    /// Source coordinates (pixel centres) for every output pixel, by inverse mapping.
    fn source_coords(&self, h: usize, w: usize) -> Vec<(f64, f64)> {
        let inv = self.inverse();
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        (0..h * w)
            .map(|i| {
                let p = ((i / w) as f64 + 0.5 - cy, (i % w) as f64 + 0.5 - cx);
                let (y, x) = inv.apply_centered(p);
                (y + cy - 0.5, x + cx - 0.5)
            })
            .collect()
    }

    /// Bilinear warp of a `[C, H, W]` tensor with edge clamping.
    pub fn warp_image(&self, image: &Tensor) -> Result<Tensor> {
        let &[c, h, w] = image.shape() else {
            return Err(DataError::Invalid(format!("expected [C, H, W], got {:?}", image.shape())));
        };
        let src = image.data();
        let coords = self.source_coords(h, w);
        let mut out = vec![0.0; c * h * w];
        for (i, &(y, x)) in coords.iter().enumerate() {
            let y = y.clamp(0.0, (h - 1) as f64);
            let x = x.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            for ch in 0..c {
                let p = &src[ch * h * w..];
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[ch * h * w + i] = top * (1.0 - fy) + bottom * fy;
            }
        }
        Ok(Tensor::new(&[c, h, w], out)?)
    }

    /// Nearest-neighbour warp of a label map; pixels mapped from outside become background.
    pub fn warp_labels(&self, labels: &[u8], h: usize, w: usize) -> Vec<u8> {
        self.source_coords(h, w)
            .into_iter()
            .map(|(y, x)| {
                let (y, x) = (y.round(), x.round());
                if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                    0
                } else {
                    labels[y as usize * w + x as usize]
                }
            })
            .collect()
    }
}

/// Expands an annotated still image into an `n`-frame pseudo-video.
///
/// Frame 0 is the original pair; every later frame applies an independent
/// random transform to both image and labels. The transforms are returned
/// alongside the sample, identity first.
pub fn pseudo_video_from_image(
    image: &Tensor,
    labels: &[u8],
    num_objects: usize,
    n: usize,
    ranges: &AugmentRanges,
    rng: &mut impl Rng,
) -> Result<(VideoSample, Vec<AffineParams>)> {
    let &[3, h, w] = image.shape() else {
        return Err(DataError::Invalid(format!("expected an RGB [3, H, W] image, got {:?}", image.shape())));
    };
    if n == 0 {
        return Err(DataError::Invalid("pseudo-video needs at least one frame".into()));
    }
    if labels.len() != h * w {
        return Err(DataError::Invalid(format!("label map has {} pixels, image has {}", labels.len(), h * w)));
    }
    let mut params = vec![AffineParams::identity()];
    let mut frames = vec![image.detach()];
    let mut maps = vec![Some(labels.to_vec())];
    for _ in 1..n {
        let p = AffineParams::random(ranges, h, w, rng);
        frames.push(p.warp_image(image)?);
        maps.push(Some(p.warp_labels(labels, h, w)));
        params.push(p);
    }
    Ok((VideoSample::new("pseudo", frames, maps, num_objects)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_composes_to_identity() {
        let p = AffineParams {
            angle_deg: 12.0,
            scale: 1.07,
            ty: 3.0,
            tx: -2.5,
        };
        let q = (4.0, -7.0);
        let back = p.inverse().apply_centered(p.apply_centered(q));
        assert!((back.0 - q.0).abs() < 1e-12 && (back.1 - q.1).abs() < 1e-12);
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = Tensor::from_fn(&[3, 5, 4], |i| i as f64 / 60.0);
        let out = AffineParams::identity().warp_image(&img).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let labels: Vec<u8> = (0..20).map(|i| (i % 3) as u8).collect();
        assert_eq!(AffineParams::identity().warp_labels(&labels, 5, 4), labels);
    }

    #[test]
    fn single_frame_is_original() {
        let img = Tensor::from_fn(&[3, 4, 4], |i| (i % 7) as f64 / 7.0);
        let labels = vec![1u8; 16];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (s, p) = pseudo_video_from_image(&img, &labels, 1, 1, &AugmentRanges::default(), &mut rng).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.frames[0].data(), img.data());
        assert_eq!(s.labels[0].as_deref(), Some(labels.as_slice()));
        assert_eq!(p, vec![AffineParams::identity()]);
    }
}
