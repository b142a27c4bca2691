//! Region similarity J, contour accuracy F and their per-sequence aggregation.
//!
//! Masks are `[1, H, W]` tensors; a pixel is foreground when its value is
//! above one half. Contours are the pixels flagged by
//! [`laplacian_boundary`](crate::boundary::laplacian_boundary) and are matched
//! within a disk of `tolerance` pixels rather than by bipartite matching.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::boundary::{laplacian_boundary, BOUNDARY_THRESHOLD};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Boundary(#[from] crate::boundary::BoundaryError),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch { what: String, expected: usize, got: usize },
    #[error("sequence `{0}` has no annotated frame after the first")]
    NothingToScore(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_same(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        }
        .into());
    }
    Ok(())
}

fn fg(v: f64) -> bool {
    v > 0.5
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_same(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (fg(p), fg(g));
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `⌈0.8% of the image diagonal⌉`, at least 1.
pub fn default_tolerance(h: usize, w: usize) -> usize {
    ((0.008 * ((h * h + w * w) as f64).sqrt()).ceil() as usize).max(1)
}

fn dilate(b: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let r = r as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !b[y as usize * w + x as usize] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    out[yy as usize * w + xx as usize] = true;
                }
            }
        }
    }
    out
}

fn contour(mask: &Tensor) -> Result<Vec<bool>> {
    let binary = Tensor::new(mask.shape(), mask.data().iter().map(|&v| fg(v) as u8 as f64).collect())?;
    Ok(laplacian_boundary(&binary, BOUNDARY_THRESHOLD)?
        .values()
        .data()
        .iter()
        .map(|&v| v == 1.0)
        .collect())
}

/// Boundary F-measure with dilation-based matching.
pub fn contour_f(pred: &Tensor, gt: &Tensor, tolerance: usize) -> Result<f64> {
    check_same(pred, gt)?;
    let &[1, h, w] = pred.shape() else {
        return Err(TensorError::RankMismatch {
            op: "contour_f",
            expected: 3,
            got: pred.shape().to_vec(),
        }
        .into());
    };
    let (bp, bg) = (contour(pred)?, contour(gt)?);
    let (np, ng) = (bp.iter().filter(|&&v| v).count(), bg.iter().filter(|&&v| v).count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (dp, dg) = (dilate(&bp, h, w, tolerance), dilate(&bg, h, w, tolerance));
    let matched_p = bp.iter().zip(&dg).filter(|(&b, &d)| b && d).count();
    let matched_g = bg.iter().zip(&dp).filter(|(&b, &d)| b && d).count();
    let precision = matched_p as f64 / np as f64;
    let recall = matched_g as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Per-frame label maps of one sequence. `None` marks an unannotated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceLabels {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Option<Vec<u8>>>,
}

impl SequenceLabels {
    fn object_mask(&self, t: usize, object: u8) -> Option<Tensor> {
        let labels = self.frames[t].as_ref()?;
        let data = labels.iter().map(|&l| (l == object) as u8 as f64).collect();
        Some(Tensor::new(&[1, self.height, self.width], data).expect("label map matches size"))
    }

    fn max_label(&self) -> u8 {
        self.frames.iter().flatten().flat_map(|f| f.iter().copied()).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
}

impl Scores {
    fn new(j: f64, f: f64) -> Scores {
        Scores { j, f, jf: (j + f) / 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_sequence: BTreeMap<String, Scores>,
    pub global: Scores,
    pub num_objects: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scores predictions against ground truth, skipping the first frame.
///
/// Each object's J and F are averaged over its scored frames. A sequence
/// score is the mean over its objects, and the global score is the mean over
/// all objects of all sequences. `tolerance = None` picks
/// [`default_tolerance`] per sequence.
pub fn evaluate(preds: &[SequenceLabels], gts: &[SequenceLabels], tolerance: Option<usize>) -> Result<MetricsReport> {
    if preds.len() != gts.len() {
        return Err(MetricsError::LengthMismatch {
            what: "sequence count".into(),
            expected: gts.len(),
            got: preds.len(),
        });
    }
    let mut per_sequence = BTreeMap::new();
    let (mut all_j, mut all_f) = (Vec::new(), Vec::new());
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.frames.len() != gt.frames.len() || (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(MetricsError::LengthMismatch {
                what: format!("frames of `{}`", gt.name),
                expected: gt.frames.len(),
                got: pred.frames.len(),
            });
        }
        let tol = tolerance.unwrap_or_else(|| default_tolerance(gt.height, gt.width));
        let (mut seq_j, mut seq_f) = (Vec::new(), Vec::new());
        for object in 1..=gt.max_label() {
            let (mut oj, mut of) = (Vec::new(), Vec::new());
            for t in 1..gt.frames.len() {
                let Some(g) = gt.object_mask(t, object) else { continue };
                let p = pred
                    .object_mask(t, object)
                    .unwrap_or_else(|| Tensor::zeros(&[1, gt.height, gt.width]));
                oj.push(jaccard(&p, &g)?);
                of.push(contour_f(&p, &g, tol)?);
            }
            if !oj.is_empty() {
                seq_j.push(mean(&oj));
                seq_f.push(mean(&of));
            }
        }
        if seq_j.is_empty() {
            return Err(MetricsError::NothingToScore(gt.name.clone()));
        }
        per_sequence.insert(gt.name.clone(), Scores::new(mean(&seq_j), mean(&seq_f)));
        all_j.extend(seq_j);
        all_f.extend(seq_f);
    }
    let global = if all_j.is_empty() {
        Scores::new(0.0, 0.0)
    } else {
        Scores::new(mean(&all_j), mean(&all_f))
    };
    Ok(MetricsReport {
        per_sequence,
        global,
        num_objects: all_j.len(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per sequence followed by a `__global__` summary row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sequence", "J", "F", "JF"])?;
        let rows = self
            .per_sequence
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .chain(std::iter::once(("__global__", &self.global)));
        for (name, s) in rows {
            w.write_record([name.to_string(), format!("{:.6}", s.j), format!("{:.6}", s.f), format!("{:.6}", s.jf)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: usize, w: usize, y0: usize, x0: usize, rh: usize, rw: usize) -> Tensor {
        Tensor::from_fn(&[1, h, w], |i| {
            let (y, x) = (i / w, i % w);
            ((y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x)) as u8 as f64
        })
    }

    #[test]
    fn jaccard_cases() {
        let a = rect(6, 6, 1, 1, 2, 3);
        let b = rect(6, 6, 1, 2, 2, 3);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &rect(6, 6, 4, 4, 1, 1)).unwrap(), 0.0);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.5);
        let z = Tensor::zeros(&[1, 6, 6]);
        assert_eq!(jaccard(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn contour_cases() {
        let g = rect(12, 12, 3, 3, 5, 5);
        let z = Tensor::zeros(&[1, 12, 12]);
        assert_eq!(contour_f(&g, &g, 1).unwrap(), 1.0);
        assert_eq!(contour_f(&z, &g, 1).unwrap(), 0.0);
        assert_eq!(contour_f(&z, &z, 1).unwrap(), 1.0);
        let shifted = rect(12, 12, 3, 4, 5, 5);
        assert_eq!(contour_f(&shifted, &g, 2).unwrap(), 1.0);
        assert!(contour_f(&shifted, &g, 0).unwrap() < 1.0);
    }

    #[test]
    fn tolerance_default() {
        assert_eq!(default_tolerance(64, 64), 1);
        assert_eq!(default_tolerance(480, 854), 8);
    }

    fn seq(name: &str, frames: Vec<Vec<u8>>) -> SequenceLabels {
        SequenceLabels {
            name: name.into(),
            height: 2,
            width: 2,
            frames: frames.into_iter().map(Some).collect(),
        }
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = seq("a", vec![vec![1, 0, 0, 0], vec![1, 1, 0, 0], vec![0, 1, 0, 0]]);
        let r = evaluate(std::slice::from_ref(&gt), std::slice::from_ref(&gt), None).unwrap();
        assert_eq!(r.global.jf, 1.0);
        let empty = seq("a", vec![vec![0; 4]; 3]);
        let r = evaluate(&[empty], &[gt], None).unwrap();
        assert_eq!(r.global.jf, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let gt = seq("a", vec![vec![1, 0, 0, 0], vec![1, 0, 0, 0]]);
        assert!(evaluate(&[], std::slice::from_ref(&gt), None).is_err());
        let short = seq("a", vec![vec![1, 0, 0, 0]]);
        assert!(evaluate(&[short], &[gt], None).is_err());
    }

    #[test]
    fn csv_has_global_row() {
        let gt = seq("a", vec![vec![1, 0, 0, 0], vec![1, 0, 0, 0]]);
        let r = evaluate(std::slice::from_ref(&gt), std::slice::from_ref(&gt), None).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().starts_with("__global__,1.000000"));
    }
}
