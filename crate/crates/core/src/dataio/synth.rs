//! Moving-shapes videos with look-alike distractors.
//!
//! Every target gets a colour; every distractor copies one target's colour
//! up to a per-channel offset of at most `color_delta`. Distractors are not
//! labelled, so a model that matches on appearance alone confuses them with
//! the target.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, VideoSample};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeMix {
    Rectangles,
    Ellipses,
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Labelled objects, ids `1..=num_shapes`.
    pub num_shapes: usize,
    pub distractor_count: usize,
    /// Largest per-channel colour difference between a distractor and its target.
    pub color_delta: f64,
    /// Shape extents are integers drawn from `min_size..=max_size` pixels.
    pub min_size: usize,
    pub max_size: usize,
    pub shapes: ShapeMix,
    /// Largest speed in pixels per frame; speeds are drawn from `[speed / 2, speed]`.
    pub speed: f64,
    /// Per-frame positional jitter, uniform in `[-jitter, jitter]`, not accumulated.
    /// The first frame is never jittered, so every shape starts inside the frame.
    pub jitter: f64,
    /// When false, targets are always drawn above distractors.
    pub occlusion: bool,
    /// Amplitude of per-pixel uniform noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            num_shapes: 1,
            distractor_count: 2,
            color_delta: 0.05,
            min_size: 10,
            max_size: 20,
            shapes: ShapeMix::Mixed,
            speed: 2.0,
            jitter: 0.5,
            occlusion: true,
            noise: 0.03,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::Invalid(m));
        if self.num_shapes == 0 || self.num_shapes > u8::MAX as usize {
            return fail(format!("num_shapes must be in 1..=255, got {}", self.num_shapes));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return fail(format!("invalid size range {}..={}", self.min_size, self.max_size));
        }
        if self.max_size >= self.height.min(self.width) {
            return fail(format!(
                "shapes of {} px do not fit a {}x{} frame",
                self.max_size, self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.color_delta) || !(self.speed >= 0.0) || !(self.jitter >= 0.0) || !(self.noise >= 0.0) {
            return fail("colour delta, speed, jitter and noise must be non-negative".into());
        }
        Ok(())
    }
}

/// One shape's appearance and its rendered centre in every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeTrack {
    pub kind: ShapeKind,
    /// Full extent `(height, width)` in pixels.
    pub size: (usize, usize),
    pub color: [f64; 3],
    /// Object id, 0 for distractors.
    pub label: u8,
    /// Drawing order; higher is drawn later.
    pub depth: usize,
    pub centers: Vec<(f64, f64)>,
}

impl ShapeTrack {
    /// Whether the pixel centre `(y + 0.5, x + 0.5)` lies in the shape at frame `t`.
    ///
    /// Rectangles are half-open so that integer extents cover exactly
    /// `height * width` pixel centres at any sub-pixel offset.
    pub fn covers(&self, t: usize, y: usize, x: usize) -> bool {
        let (cy, cx) = self.centers[t];
        let (hy, hx) = (self.size.0 as f64 / 2.0, self.size.1 as f64 / 2.0);
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        match self.kind {
            ShapeKind::Rectangle => py >= cy - hy && py < cy + hy && px >= cx - hx && px < cx + hx,
            ShapeKind::Ellipse => ((py - cy) / hy).powi(2) + ((px - cx) / hx).powi(2) <= 1.0,
        }
    }

    /// Continuous area of the shape.
    pub fn area(&self) -> f64 {
        let (h, w) = (self.size.0 as f64, self.size.1 as f64);
        match self.kind {
            ShapeKind::Rectangle => h * w,
            ShapeKind::Ellipse => std::f64::consts::PI * h * w / 4.0,
        }
    }

    /// Perimeter of the shape, Ramanujan's approximation for ellipses.
    pub fn perimeter(&self) -> f64 {
        let (h, w) = (self.size.0 as f64, self.size.1 as f64);
        match self.kind {
            ShapeKind::Rectangle => 2.0 * (h + w),
            ShapeKind::Ellipse => {
                let (a, b) = (h / 2.0, w / 2.0);
                std::f64::consts::PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt())
            }
        }
    }
}

fn pick_kind(mix: ShapeMix, rng: &mut impl Rng) -> ShapeKind {
    match mix {
        ShapeMix::Rectangles => ShapeKind::Rectangle,
        ShapeMix::Ellipses => ShapeKind::Ellipse,
        ShapeMix::Mixed if rng.gen_bool(0.5) => ShapeKind::Rectangle,
        ShapeMix::Mixed => ShapeKind::Ellipse,
    }
}

/// Draws centre trajectories: linear motion that reflects off the frame
/// edges so the nominal shape stays inside, plus independent jitter.
fn trajectory(cfg: &SynthConfig, size: (usize, usize), length: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let (hy, hx) = (size.0 as f64 / 2.0, size.1 as f64 / 2.0);
    let (ly, uy) = (hy, cfg.height as f64 - hy);
    let (lx, ux) = (hx, cfg.width as f64 - hx);
    let mut y = rng.gen_range(ly..=uy);
    let mut x = rng.gen_range(lx..=ux);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = if cfg.speed > 0.0 { rng.gen_range(cfg.speed / 2.0..=cfg.speed) } else { 0.0 };
    let (mut vy, mut vx) = (speed * angle.sin(), speed * angle.cos());
    let mut out = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            (y, vy) = reflect(y + vy, vy, ly, uy);
            (x, vx) = reflect(x + vx, vx, lx, ux);
        }
        let (jy, jx) = if cfg.jitter > 0.0 && t > 0 {
            (rng.gen_range(-cfg.jitter..=cfg.jitter), rng.gen_range(-cfg.jitter..=cfg.jitter))
        } else {
            (0.0, 0.0)
        };
        out.push((y + jy, x + jx));
    }
    out
}

fn reflect(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if p < lo {
        ((2.0 * lo - p).min(hi), -v)
    } else if p > hi {
        ((2.0 * hi - p).max(lo), -v)
    } else {
        (p, v)
    }
}

/// Samples shapes, colours, depths and trajectories for a sequence.
pub fn generate_tracks(cfg: &SynthConfig, length: usize, rng: &mut impl Rng) -> Result<Vec<ShapeTrack>> {
    cfg.validate()?;
    if length == 0 {
        return Err(DataError::Invalid("sequence length must be at least 1".into()));
    }
    let mut tracks: Vec<ShapeTrack> = Vec::new();
    for k in 0..cfg.num_shapes + cfg.distractor_count {
        let size = (
            rng.gen_range(cfg.min_size..=cfg.max_size),
            rng.gen_range(cfg.min_size..=cfg.max_size),
        );
        let kind = pick_kind(cfg.shapes, rng);
        let (label, color) = if k < cfg.num_shapes {
            ((k + 1) as u8, [0; 3].map(|_: u8| rng.gen_range(0.35..=0.95)))
        } else {
            let base: [f64; 3] = tracks[rng.gen_range(0..cfg.num_shapes)].color;
            let d = cfg.color_delta;
            (0, base.map(|c| (c + if d > 0.0 { rng.gen_range(-d..=d) } else { 0.0 }).clamp(0.0, 1.0)))
        };
        let centers = trajectory(cfg, size, length, rng);
        tracks.push(ShapeTrack {
            kind,
            size,
            color,
            label,
            depth: 0,
            centers,
        });
    }
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.shuffle(rng);
    if !cfg.occlusion {
        // stable partition keeps the shuffled order within each group
        order.sort_by_key(|&i| tracks[i].label != 0);
    }
    for (depth, &i) in order.iter().enumerate() {
        tracks[i].depth = depth;
    }
    Ok(tracks)
}

/// Rasterises tracks over a flat background with uniform pixel noise.
pub fn render_tracks(cfg: &SynthConfig, tracks: &[ShapeTrack], background: [f64; 3], name: &str, rng: &mut impl Rng) -> Result<VideoSample> {
    let (h, w) = (cfg.height, cfg.width);
    let length = tracks.first().map_or(0, |t| t.centers.len());
    let mut order: Vec<&ShapeTrack> = tracks.iter().collect();
    order.sort_by_key(|t| t.depth);
    let mut frames = Vec::with_capacity(length);
    let mut labels = Vec::with_capacity(length);
    for t in 0..length {
        let mut rgb = vec![0.0; 3 * h * w];
        let mut lab = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut color = background;
                let mut label = 0;
                for s in &order {
                    if s.covers(t, y, x) {
                        color = s.color;
                        label = s.label;
                    }
                }
                for c in 0..3 {
                    let n = if cfg.noise > 0.0 { rng.gen_range(-cfg.noise..=cfg.noise) } else { 0.0 };
                    rgb[c * h * w + y * w + x] = (color[c] + n).clamp(0.0, 1.0);
                }
                lab[y * w + x] = label;
            }
        }
        frames.push(Tensor::new(&[3, h, w], rgb)?);
        labels.push(Some(lab));
    }
    VideoSample::new(name, frames, labels, cfg.num_shapes)
}

/// Deterministic synthetic sequence for `cfg.seed`.
pub fn generate_sequence(cfg: &SynthConfig, length: usize) -> Result<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tracks = generate_tracks(cfg, length, &mut rng)?;
    let background = [0; 3].map(|_: u8| rng.gen_range(0.0..=0.2));
    render_tracks(cfg, &tracks, background, &format!("synth_{:08x}", cfg.seed), &mut rng)
}
