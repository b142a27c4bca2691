use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gsfm, ModelError, Result};
use crate::boundary::{bootstrapped_ce, boundary_loss, laplacian_boundary, BootstrapSchedule, BoundaryMap, BOUNDARY_THRESHOLD, DICE_EPS};
use crate::dataio::{pseudo_video_from_image, sample_frame_triplet, AugmentRanges, DataError, VideoSample};
use crate::memory::MemoryBank;
use crate::nn::Module;
use crate::tensor::Tensor;

/// Three frames of one object: frame 0 carries the ground-truth mask given
/// to memory, frames 1 and 2 are supervised.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub frames: [Tensor; 3],
    /// Binary `0/1` label maps of the chosen object.
    pub labels: [Vec<u8>; 3],
    pub boundaries: [BoundaryMap; 3],
}

impl TrainSample {
    pub fn new(frames: [Tensor; 3], labels: [Vec<u8>; 3]) -> Result<TrainSample> {
        let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
        let boundaries = [0, 1, 2].map(|i| {
            let m = Tensor::new(&[1, h, w], labels[i].iter().map(|&l| l as f64).collect())?;
            Ok::<_, ModelError>(laplacian_boundary(&m, BOUNDARY_THRESHOLD)?)
        });
        let [b0, b1, b2] = boundaries;
        Ok(TrainSample {
            frames,
            labels,
            boundaries: [b0?, b1?, b2?],
        })
    }

    fn mask(&self, i: usize) -> Tensor {
        let (h, w) = (self.frames[i].shape()[1], self.frames[i].shape()[2]);
        Tensor::new(&[1, h, w], self.labels[i].iter().map(|&l| l as f64).collect()).expect("label map matches frame")
    }
}

fn binary_labels(labels: &[u8], object: u8) -> Vec<u8> {
    labels.iter().map(|&l| (l == object) as u8).collect()
}

fn pick_object(labels: &[u8], num_objects: usize, rng: &mut impl Rng) -> u8 {
    let present: Vec<u8> = (1..=num_objects as u8).filter(|k| labels.contains(k)).collect();
    if present.is_empty() {
        1
    } else {
        present[rng.gen_range(0..present.len())]
    }
}

/// Three chronologically ordered annotated frames of one random object.
pub fn sample_from_video(video: &VideoSample, max_gap: usize, rng: &mut impl Rng) -> Result<TrainSample> {
    let idx = sample_frame_triplet(video.len(), max_gap, rng)?;
    let labels = idx.map(|t| video.labels[t].as_ref());
    let [Some(l0), Some(l1), Some(l2)] = labels else {
        return Err(DataError::Invalid(format!("sequence `{}` lacks annotations for training", video.name)).into());
    };
    let object = pick_object(l0, video.num_objects, rng);
    TrainSample::new(
        idx.map(|t| video.frames[t].clone()),
        [l0, l1, l2].map(|l| binary_labels(l, object)),
    )
}

/// A three-frame pseudo-video built from one annotated still frame.
pub fn sample_from_pseudo_video(image: &Tensor, labels: &[u8], num_objects: usize, ranges: &AugmentRanges, rng: &mut impl Rng) -> Result<TrainSample> {
    let object = pick_object(labels, num_objects, rng);
    let (video, _) = pseudo_video_from_image(image, &binary_labels(labels, object), 1, 3, ranges, rng)?;
    let l = |t: usize| video.labels[t].clone().expect("pseudo-video frames are annotated");
    TrainSample::new([0, 1, 2].map(|t| video.frames[t].clone()), [l(0), l(1), l(2)])
}

/// Largest frame gap of the training triplets at training progress `p ∈ [0, 1]`:
/// grows from 1 to 5 over the first half, holds at 5, and drops to 2 for the last fifth.
pub fn curriculum_max_gap(progress: f64) -> usize {
    if progress < 0.5 {
        1 + (8.0 * progress).round() as usize
    } else if progress < 0.8 {
        5
    } else {
        2
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Sequence-stage steps.
    pub steps: usize,
    /// Pseudo-video warm-up steps, run before the sequence stage.
    pub pretrain_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Fraction of all steps after which the learning rate is multiplied by `lr_decay`.
    pub lr_decay_at: f64,
    pub lr_decay: f64,
    pub bootstrap: BootstrapSchedule,
    pub augment: AugmentRanges,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            pretrain_steps: 100,
            batch_size: 4,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            lr_decay_at: 0.75,
            lr_decay: 0.5,
            bootstrap: BootstrapSchedule::default(),
            augment: AugmentRanges::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        self.steps + self.pretrain_steps
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step as f64 >= self.lr_decay_at * self.total_steps() as f64 {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || self.total_steps() == 0 {
            return Err(ModelError::Config("training needs positive batch size, lr and step count".into()));
        }
        Ok(())
    }
}

/// Moment buffers of an optimiser, in parameter visiting order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub t: u64,
    pub names: Vec<String>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: OptimizerState,
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    state: OptimizerState,
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

fn fresh_state(kind: OptimizerKind, model: &dyn Module) -> OptimizerState {
    let params = model.named_params();
    OptimizerState {
        kind,
        t: 0,
        names: params.iter().map(|(n, _)| n.clone()).collect(),
        first: params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect(),
        second: if kind == OptimizerKind::Adam {
            params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect()
        } else {
            Vec::new()
        },
    }
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, momentum: f64, model: &dyn Module) -> Optimizer {
        let state = fresh_state(kind, model);
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                state,
            }),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { momentum, state }),
        }
    }

    pub fn state(&self) -> &OptimizerState {
        match self {
            Optimizer::Adam(a) => &a.state,
            Optimizer::Sgd(s) => &s.state,
        }
    }

    /// Restores buffers saved by [`Optimizer::state`].
    pub fn load_state(&mut self, state: OptimizerState) -> Result<()> {
        let own = match self {
            Optimizer::Adam(a) => &mut a.state,
            Optimizer::Sgd(s) => &mut s.state,
        };
        if state.kind != own.kind || state.names != own.names {
            return Err(ModelError::CheckpointMismatch("optimiser state does not match the parameters".into()));
        }
        *own = state;
        Ok(())
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step(&mut self, model: &mut dyn Module, lr: f64) {
        let mut i = 0;
        match self {
            Optimizer::Adam(a) => {
                a.state.t += 1;
                let t = a.state.t as i32;
                let (b1, b2, eps) = (a.beta1, a.beta2, a.eps);
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                let st = &mut a.state;
                model.visit_params_mut("", &mut |_, p| {
                    let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
                    let (m, v) = (&mut st.first[i], &mut st.second[i]);
                    let mut data = p.to_vec();
                    for j in 0..data.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                    *p = Tensor::param(p.shape(), data).expect("same shape");
                    i += 1;
                });
            }
            Optimizer::Sgd(s) => {
                s.state.t += 1;
                let mu = s.momentum;
                let st = &mut s.state;
                model.visit_params_mut("", &mut |_, p| {
                    let g = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
                    let buf = &mut st.first[i];
                    let mut data = p.to_vec();
                    for j in 0..data.len() {
                        buf[j] = mu * buf[j] + g[j];
                        data[j] -= lr * buf[j];
                    }
                    *p = Tensor::param(p.shape(), data).expect("same shape");
                    i += 1;
                });
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mask: f64,
    pub boundary: f64,
}

impl Gsfm {
    /// Loss of one sample: frame 1 read from memory {0}, frame 2 from
    /// memory {0, 1} where frame 1 is stored with its predicted mask.
    /// Returns `(total, mask part, boundary part)`, each averaged over the two frames.
    pub fn sample_loss(&self, sample: &TrainSample, keep_fraction: f64) -> Result<(Tensor, f64, f64)> {
        let w = self.config.boundary_loss_weight;
        let keys = [0, 1, 2].map(|i| self.encode_key(&sample.frames[i]));
        let [k0, k1, k2] = keys;
        let (k0, k1, k2) = (k0?, k1?, k2?);
        let mut bank = MemoryBank::new();
        bank.insert(0, &k0.key, &self.encode_value(&sample.frames[0], &sample.mask(0), &k0)?)?;
        let mut total: Option<Tensor> = None;
        let (mut mask_sum, mut boundary_sum) = (0.0, 0.0);
        for (i, key) in [(1usize, &k1), (2, &k2)] {
            let out = self.segment_frame(key, &bank)?;
            let mask_loss = bootstrapped_ce(&out.mask_logits, &sample.labels[i], keep_fraction)?;
            mask_sum += mask_loss.item()?;
            let mut loss = mask_loss;
            if let (Some(b), true) = (&out.boundary_logits, w > 0.0) {
                let bl = boundary_loss(b, &sample.boundaries[i], DICE_EPS)?;
                boundary_sum += bl.item()?;
                loss = loss.add(&bl.scale(w))?;
            }
            total = Some(match total {
                Some(t) => t.add(&loss)?,
                None => loss,
            });
            if i == 1 {
                let p = out.probability()?;
                bank.insert(1, &k1.key, &self.encode_value(&sample.frames[1], &p, &k1)?)?;
            }
        }
        let total = total.expect("two supervised frames").scale(0.5);
        Ok((total, mask_sum / 2.0, boundary_sum / 2.0))
    }
}

/// Owns a model, its optimiser and the step counter.
///
/// Each step draws its batch from a generator seeded by `(seed, step)`, so a
/// run resumed from a checkpoint repeats the original losses exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Gsfm,
    pub config: TrainConfig,
    pub optimizer: Optimizer,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Gsfm, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.momentum, &model);
        Ok(Trainer {
            model,
            config,
            optimizer,
            step: 0,
        })
    }

    pub fn step_rng(&self, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64);
        rng
    }

    pub fn is_pretraining(&self) -> bool {
        self.step < self.config.pretrain_steps
    }

    /// Batch for the current step: pseudo-videos from single annotated
    /// frames during warm-up, curriculum triplets afterwards.
    pub fn make_batch(&self, videos: &[VideoSample]) -> Result<Vec<TrainSample>> {
        if videos.is_empty() {
            return Err(ModelError::Config("no training videos".into()));
        }
        let mut rng = self.step_rng(self.step);
        let progress = if self.config.steps == 0 {
            1.0
        } else {
            self.step.saturating_sub(self.config.pretrain_steps) as f64 / self.config.steps as f64
        };
        (0..self.config.batch_size)
            .map(|_| {
                let v = &videos[rng.gen_range(0..videos.len())];
                if self.is_pretraining() {
                    let annotated: Vec<usize> = (0..v.len()).filter(|&t| v.labels[t].is_some()).collect();
                    let t = annotated[rng.gen_range(0..annotated.len())];
                    let labels = v.labels[t].as_ref().expect("annotated");
                    sample_from_pseudo_video(&v.frames[t], labels, v.num_objects, &self.config.augment, &mut rng)
                } else {
                    sample_from_video(v, curriculum_max_gap(progress), &mut rng)
                }
            })
            .collect()
    }

    /// One optimisation step on `batch`. Non-finite losses abort before the update.
    pub fn train_step(&mut self, batch: &[TrainSample]) -> Result<LossBreakdown> {
        let kf = self.config.bootstrap.keep_fraction(self.step, self.config.total_steps());
        let mut total: Option<Tensor> = None;
        let (mut mask, mut boundary) = (0.0, 0.0);
        for s in batch {
            let (l, m, b) = self.model.sample_loss(s, kf)?;
            mask += m;
            boundary += b;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
        }
        let n = batch.len().max(1) as f64;
        let Some(total) = total else {
            return Err(ModelError::Config("empty batch".into()));
        };
        let total = total.scale(1.0 / n);
        let value = total.item()?;
        if !value.is_finite() {
            return Err(ModelError::NonFiniteLoss { step: self.step });
        }
        total.backward()?;
        let lr = self.config.lr_at(self.step);
        self.optimizer.step(&mut self.model, lr);
        self.step += 1;
        Ok(LossBreakdown {
            total: value,
            mask: mask / n,
            boundary: boundary / n,
        })
    }

    /// Draws the step's batch and trains on it.
    pub fn run_step(&mut self, videos: &[VideoSample]) -> Result<LossBreakdown> {
        let batch = self.make_batch(videos)?;
        self.train_step(&batch)
    }
}
