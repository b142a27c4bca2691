//! Toy-scale segmentation network: key and value encoders with the
//! low-frequency filter module, the space-time memory read, a two-stage
//! refinement path, and the mask/boundary decoder with the high-frequency
//! filter module.

mod blocks;
mod checkpoint;
mod decoder;
mod encoder;
mod train;

pub use blocks::{ChannelAttention, RefineBlock, ResBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointState};
pub use decoder::{BoundaryBranch, Decoder, SegmentationOutput};
pub use encoder::{Backbone, KeyEncoder, KeyFeatures, ValueEncoder};
pub use train::{
    curriculum_max_gap, sample_from_pseudo_video, sample_from_video, Adam, LossBreakdown, Optimizer, OptimizerKind,
    OptimizerState, Sgd, TrainConfig, TrainSample, Trainer,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::memory::{self, MemoryBank, ReadConfig};
use crate::nn::{join, Module};
use crate::spectral::FilterMode;
use crate::tensor::{no_grad, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error(transparent)]
    Boundary(#[from] crate::boundary::BoundaryError),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Network hyperparameters. `lfm` and `hfm` select the filter band of the
/// encoder and decoder modules, `None` removes the module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsfmConfig {
    pub input_size: (usize, usize),
    pub encoder_stride: usize,
    pub key_channels: usize,
    pub value_channels: usize,
    /// Width of the first backbone stage; later stages use 2x and 4x.
    pub base_channels: usize,
    pub lfm: Option<FilterMode>,
    pub hfm: Option<FilterMode>,
    pub boundary_branch: bool,
    pub lfm_sigma: f64,
    pub hfm_sigma: f64,
    /// Use one encoder filter module for both encoders.
    pub share_lfm: bool,
    pub top_k: usize,
    pub memorize_every: usize,
    pub boundary_loss_weight: f64,
    /// Seed of the weight initialisation.
    pub init_seed: u64,
}

impl Default for GsfmConfig {
    fn default() -> Self {
        GsfmConfig {
            input_size: (64, 64),
            encoder_stride: 4,
            key_channels: 16,
            value_channels: 32,
            base_channels: 8,
            lfm: Some(FilterMode::Low),
            hfm: Some(FilterMode::High),
            boundary_branch: true,
            lfm_sigma: 7.0,
            hfm_sigma: 7.0,
            share_lfm: false,
            top_k: 50,
            memorize_every: 3,
            boundary_loss_weight: 0.05,
            init_seed: 0,
        }
    }
}

impl GsfmConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let bad = |m: String| Err(ModelError::Config(m));
        if self.encoder_stride != 4 {
            return bad(format!("only stride 4 is supported, got {}", self.encoder_stride));
        }
        if h == 0 || w == 0 || h % self.encoder_stride != 0 || w % self.encoder_stride != 0 {
            return bad(format!("stride {} must divide the input size {h}x{w}", self.encoder_stride));
        }
        if self.key_channels == 0 || self.value_channels == 0 || self.base_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.top_k == 0 || self.memorize_every == 0 {
            return bad("top_k and memorize_every must be at least 1".into());
        }
        if !(self.lfm_sigma > 0.0 && self.hfm_sigma > 0.0) {
            return bad("filter sigmas must be positive".into());
        }
        if !(self.boundary_loss_weight >= 0.0) {
            return bad("boundary loss weight must be non-negative".into());
        }
        Ok(())
    }

    pub fn feature_size(&self) -> (usize, usize) {
        (self.input_size.0 / self.encoder_stride, self.input_size.1 / self.encoder_stride)
    }

    pub fn read_config(&self) -> ReadConfig {
        ReadConfig {
            top_k: self.top_k,
            ..ReadConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gsfm {
    pub config: GsfmConfig,
    pub key_encoder: KeyEncoder,
    pub value_encoder: ValueEncoder,
    pub decoder: Decoder,
}

impl Gsfm {
    pub fn new(config: GsfmConfig) -> Result<Gsfm> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        Ok(Gsfm {
            key_encoder: KeyEncoder::new(&config, &mut rng)?,
            value_encoder: ValueEncoder::new(&config, &mut rng)?,
            decoder: Decoder::new(&config, &mut rng)?,
            config,
        })
    }

    fn check_frame(&self, frame: &Tensor) -> Result<()> {
        let (h, w) = self.config.input_size;
        if frame.shape() != [3, h, w] {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "encode_key",
                lhs: vec![3, h, w],
                rhs: frame.shape().to_vec(),
            }));
        }
        Ok(())
    }

    pub fn encode_key(&self, frame: &Tensor) -> Result<KeyFeatures> {
        self.check_frame(frame)?;
        self.key_encoder.forward(frame)
    }

    pub fn encode_value(&self, frame: &Tensor, mask: &Tensor, key: &KeyFeatures) -> Result<Tensor> {
        self.check_frame(frame)?;
        let shared = if self.config.share_lfm { self.key_encoder.lfm.as_ref() } else { None };
        self.value_encoder.forward(frame, mask, key, shared)
    }

    /// Memory read followed by the decoder.
    pub fn segment_frame(&self, query: &KeyFeatures, bank: &MemoryBank) -> Result<SegmentationOutput> {
        let (c, h, w) = (query.key.shape()[0], query.key.shape()[1], query.key.shape()[2]);
        let readout = memory::read(&query.key.reshape(&[c, h * w])?, bank, &self.config.read_config())?;
        let cv = readout.shape()[0];
        self.decoder.forward(&readout.reshape(&[cv, h, w])?, query)
    }

    /// Segments a video from its first-frame label map.
    ///
    /// Every object runs its own memory bank. Per-object probabilities are
    /// merged by a pixelwise argmax with background probability
    /// `1 - max_k p_k`. Frames on the memorisation schedule are stored with
    /// each object's probability map, zeroed where another label wins.
    pub fn segment_video(&self, frames: &[Tensor], first_labels: &[u8], num_objects: usize) -> Result<Vec<Vec<u8>>> {
        let Some(first) = frames.first() else {
            return Ok(Vec::new());
        };
        self.check_frame(first)?;
        let (h, w) = self.config.input_size;
        if first_labels.len() != h * w {
            return Err(ModelError::Config(format!("first-frame labels cover {} pixels, expected {}", first_labels.len(), h * w)));
        }
        let _guard = no_grad();
        let mut out = vec![first_labels.to_vec()];
        if num_objects == 0 {
            out.extend(std::iter::repeat_n(vec![0; h * w], frames.len() - 1));
            return Ok(out);
        }
        let key0 = self.encode_key(first)?;
        let mut banks = Vec::with_capacity(num_objects);
        for k in 1..=num_objects as u8 {
            let mask = Tensor::new(&[1, h, w], first_labels.iter().map(|&l| (l == k) as u8 as f64).collect())?;
            let mut bank = MemoryBank::new();
            bank.insert(0, &key0.key, &self.encode_value(first, &mask, &key0)?)?;
            banks.push(bank);
        }
        for (t, frame) in frames.iter().enumerate().skip(1) {
            self.check_frame(frame)?;
            let key = self.encode_key(frame)?;
            let probs = banks
                .iter()
                .map(|bank| Ok(self.segment_frame(&key, bank)?.probability()?.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let labels = merge_objects(&probs);
            if memory::should_memorize(t, self.config.memorize_every) {
                for (k, bank) in banks.iter_mut().enumerate() {
                    let own = (k + 1) as u8;
                    let data = probs[k]
                        .iter()
                        .zip(&labels)
                        .map(|(&p, &l)| if l == 0 || l == own { p } else { 0.0 })
                        .collect();
                    let mask = Tensor::new(&[1, h, w], data)?;
                    bank.insert(t, &key.key, &self.encode_value(frame, &mask, &key)?)?;
                }
            }
            out.push(labels);
        }
        Ok(out)
    }
}

/// Pixelwise argmax over `[1 - max_k p_k, p_1, ..., p_K]`, ties to the lower label.
pub fn merge_objects(probs: &[Vec<f64>]) -> Vec<u8> {
    let n = probs.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let max = probs.iter().map(|p| p[i]).fold(0.0, f64::max);
            let mut best = (1.0 - max, 0u8);
            for (k, p) in probs.iter().enumerate() {
                if p[i] > best.0 {
                    best = (p[i], k as u8 + 1);
                }
            }
            best.1
        })
        .collect()
}

impl Module for Gsfm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.key_encoder.visit_params(&join(prefix, "key_encoder"), f);
        self.value_encoder.visit_params(&join(prefix, "value_encoder"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.key_encoder.visit_params_mut(&join(prefix, "key_encoder"), f);
        self.value_encoder.visit_params_mut(&join(prefix, "value_encoder"), f);
        self.decoder.visit_params_mut(&join(prefix, "decoder"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: u64, h: usize, w: usize) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
    }

    fn small(h: usize, w: usize, ck: usize) -> GsfmConfig {
        GsfmConfig {
            input_size: (h, w),
            key_channels: ck,
            value_channels: 8,
            base_channels: 4,
            ..GsfmConfig::default()
        }
    }

    #[test]
    fn shape_contract_grid() {
        for (h, w) in [(32, 32), (32, 64), (64, 64)] {
            for ck in [16, 32] {
                let m = Gsfm::new(small(h, w, ck)).unwrap();
                let f = frame(1, h, w);
                let key = m.encode_key(&f).unwrap();
                assert_eq!(key.key.shape(), &[ck, h / 4, w / 4]);
                let v = m.encode_value(&f, &Tensor::ones(&[1, h, w]), &key).unwrap();
                assert_eq!(v.shape(), &[8, h / 4, w / 4]);
                let mut bank = MemoryBank::new();
                bank.insert(0, &key.key, &v).unwrap();
                let out = m.segment_frame(&key, &bank).unwrap();
                assert_eq!(out.mask_logits.shape(), &[2, h, w]);
                assert_eq!(out.boundary_logits.unwrap().shape(), &[1, h, w]);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(Gsfm::new(GsfmConfig { input_size: (30, 32), ..GsfmConfig::default() }).is_err());
        assert!(Gsfm::new(GsfmConfig { encoder_stride: 8, ..GsfmConfig::default() }).is_err());
        assert!(Gsfm::new(GsfmConfig { key_channels: 0, ..GsfmConfig::default() }).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = GsfmConfig { lfm: None, ..GsfmConfig::default() };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"boundary_loss_weight\":0.05"));
        assert_eq!(serde_json::from_str::<GsfmConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<GsfmConfig>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn empty_bank_is_an_error() {
        let m = Gsfm::new(small(32, 32, 16)).unwrap();
        let key = m.encode_key(&frame(0, 32, 32)).unwrap();
        assert!(matches!(m.segment_frame(&key, &MemoryBank::new()), Err(ModelError::Memory(_))));
    }

    #[test]
    fn merge_uses_soft_background() {
        let probs = vec![vec![0.2, 0.7, 0.6], vec![0.1, 0.2, 0.6]];
        assert_eq!(merge_objects(&probs), vec![0, 1, 1]);
        assert_eq!(merge_objects(&[vec![0.5, 0.51]]), vec![0, 1]);
    }

    #[test]
    fn single_frame_video_returns_first_labels() {
        let m = Gsfm::new(small(32, 32, 16)).unwrap();
        let labels: Vec<u8> = (0..32 * 32).map(|i| (i % 3 == 0) as u8).collect();
        let out = m.segment_video(&[frame(2, 32, 32)], &labels, 1).unwrap();
        assert_eq!(out, vec![labels]);
    }
}
