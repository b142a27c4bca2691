//! Video samples, the synthetic moving-shapes generator, pseudo-videos from
//! still images, and DAVIS-layout directories.

mod augment;
mod davis;
mod synth;

pub use augment::{pseudo_video_from_image, AffineParams, AugmentRanges};
pub use davis::{
    davis_palette, load_davis_dir, read_label_png, write_boundary_png, write_davis_dir, write_label_png, DavisOptions,
    Manifest, ManifestEntry,
};
pub use synth::{generate_sequence, generate_tracks, render_tracks, ShapeKind, ShapeMix, ShapeTrack, SynthConfig};

use std::sync::OnceLock;

use rand::Rng;

use crate::boundary::{laplacian_boundary, BoundaryMap, BOUNDARY_THRESHOLD};
use crate::metrics::SequenceLabels;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("png decoding failed for {path}: {source}")]
    PngDecode {
        path: String,
        source: png::DecodingError,
    },
    #[error(transparent)]
    PngEncode(#[from] png::EncodingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("sequence `{0}` has no annotation for its first frame")]
    MissingFirstAnnotation(String),
    #[error("sequence `{seq}`: expected frame {expected:05}, found {found:05}")]
    NonContiguous { seq: String, expected: u64, found: u64 },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One video with its per-frame label maps.
///
/// Label maps hold 0 for background and `1..=num_objects` for objects.
/// Unannotated frames carry `None`.
#[derive(Clone, Debug)]
pub struct VideoSample {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Tensor>,
    pub labels: Vec<Option<Vec<u8>>>,
    pub num_objects: usize,
    /// Palette index used on disk for each object id, `palette_ids[k - 1]`.
    pub palette_ids: Vec<u8>,
    boundaries: Vec<OnceLock<Vec<BoundaryMap>>>,
}

impl VideoSample {
    pub fn new(name: impl Into<String>, frames: Vec<Tensor>, labels: Vec<Option<Vec<u8>>>, num_objects: usize) -> Result<VideoSample> {
        let name = name.into();
        let Some(first) = frames.first() else {
            return Err(DataError::Invalid(format!("sequence `{name}` has no frames")));
        };
        let &[3, height, width] = first.shape() else {
            return Err(DataError::Invalid(format!("frames must be [3, H, W], got {:?}", first.shape())));
        };
        if labels.len() != frames.len() {
            return Err(DataError::Invalid(format!(
                "sequence `{name}`: {} frames but {} label maps",
                frames.len(),
                labels.len()
            )));
        }
        if num_objects > u8::MAX as usize {
            return Err(DataError::Invalid(format!("too many objects ({num_objects})")));
        }
        for f in &frames {
            if f.shape() != [3, height, width] {
                return Err(DataError::Invalid(format!("frame shape {:?} differs from the first", f.shape())));
            }
        }
        for l in labels.iter().flatten() {
            if l.len() != height * width {
                return Err(DataError::Invalid(format!("label map has {} pixels, expected {}", l.len(), height * width)));
            }
            if let Some(&bad) = l.iter().find(|&&v| v as usize > num_objects) {
                return Err(DataError::Invalid(format!("label {bad} exceeds object count {num_objects}")));
            }
        }
        let boundaries = (0..frames.len()).map(|_| OnceLock::new()).collect();
        Ok(VideoSample {
            name,
            height,
            width,
            frames,
            labels,
            num_objects,
            palette_ids: (1..=num_objects as u8).collect(),
            boundaries,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn object_ids(&self) -> Vec<u8> {
        (1..=self.num_objects as u8).collect()
    }

    /// Binary `[1, H, W]` mask of `object` in frame `t`, if annotated.
    pub fn mask(&self, t: usize, object: u8) -> Option<Tensor> {
        let labels = self.labels.get(t)?.as_ref()?;
        let data = labels.iter().map(|&l| (l == object) as u8 as f64).collect();
        Some(Tensor::new(&[1, self.height, self.width], data).expect("label map matches frame size"))
    }

    /// Masks of all objects in frame `t`, ordered by object id.
    pub fn masks(&self, t: usize) -> Option<Vec<Tensor>> {
        self.object_ids().into_iter().map(|o| self.mask(t, o)).collect()
    }

    /// Boundary target of `object` in frame `t`, computed on first use.
    pub fn boundary(&self, t: usize, object: u8) -> Option<&BoundaryMap> {
        if object == 0 || object as usize > self.num_objects {
            return None;
        }
        self.labels.get(t)?.as_ref()?;
        let maps = self.boundaries[t].get_or_init(|| {
            self.object_ids()
                .into_iter()
                .map(|o| {
                    laplacian_boundary(&self.mask(t, o).expect("annotated frame"), BOUNDARY_THRESHOLD)
                        .expect("mask is [1, H, W]")
                })
                .collect()
        });
        maps.get(object as usize - 1)
    }

    pub fn to_sequence_labels(&self) -> SequenceLabels {
        SequenceLabels {
            name: self.name.clone(),
            height: self.height,
            width: self.width,
            frames: self.labels.clone(),
        }
    }
}

/// Picks three strictly increasing frame indices with consecutive gaps in
/// `1..=max_gap`, clamped so that the triplet fits in `len` frames.
pub fn sample_frame_triplet(len: usize, max_gap: usize, rng: &mut impl Rng) -> Result<[usize; 3]> {
    if len < 3 {
        return Err(DataError::Invalid(format!("need at least 3 frames, got {len}")));
    }
    let max_gap = max_gap.max(1).min((len - 1) / 2);
    let g1 = rng.gen_range(1..=max_gap);
    let g2 = rng.gen_range(1..=max_gap);
    let start = rng.gen_range(0..len - g1 - g2);
    Ok([start, start + g1, start + g1 + g2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> VideoSample {
        let frames = vec![Tensor::zeros(&[3, 3, 3]); 2];
        let labels = vec![Some(vec![0, 1, 1, 0, 2, 2, 0, 0, 0]), None];
        VideoSample::new("tiny", frames, labels, 2).unwrap()
    }

    #[test]
    fn masks_split_labels() {
        let s = tiny();
        assert_eq!(s.object_ids(), vec![1, 2]);
        let m = s.masks(0).unwrap();
        assert_eq!(m[0].data().iter().sum::<f64>(), 2.0);
        assert_eq!(m[1].data().iter().sum::<f64>(), 2.0);
        assert!(s.masks(1).is_none());
        assert!(s.boundary(0, 1).is_some());
        assert!(s.boundary(1, 1).is_none());
        assert!(s.boundary(0, 3).is_none());
    }

    #[test]
    fn invalid_samples_are_rejected() {
        let frames = vec![Tensor::zeros(&[3, 2, 2])];
        assert!(VideoSample::new("x", frames.clone(), vec![], 1).is_err());
        assert!(VideoSample::new("x", frames.clone(), vec![Some(vec![0, 0, 2, 0])], 1).is_err());
        assert!(VideoSample::new("x", frames, vec![Some(vec![0; 3])], 1).is_err());
        assert!(VideoSample::new("x", vec![], vec![], 0).is_err());
    }

    #[test]
    fn triplets_are_ordered_and_within_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for gap in 1..6 {
            for _ in 0..200 {
                let [a, b, c] = sample_frame_triplet(12, gap, &mut rng).unwrap();
                assert!(a < b && b < c && c < 12);
                assert!(b - a <= gap && c - b <= gap);
            }
        }
        assert_eq!(sample_frame_triplet(3, 5, &mut rng).unwrap(), [0, 1, 2]);
        assert!(sample_frame_triplet(2, 1, &mut rng).is_err());
    }
}
