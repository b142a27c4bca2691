//! Space-time memory: key affinity, top-k filtered normalisation, weighted
//! value readout, and the bank of memorised frames.
//!
//! Affinities are negative squared L2 distances between query and memory
//! keys. Each query keeps its `k` strongest memory locations and normalises
//! them with a softmax, which turns possibly negative similarities into
//! non-negative weights summing to one.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("frame {0} is already memorised")]
    DuplicateFrame(usize),
    #[error("frame {got} arrives after frame {last}; memory frames must be increasing")]
    NonIncreasingFrame { last: usize, got: usize },
    #[error("memory bank is empty")]
    EmptyBank,
    #[error("top-k must be at least 1")]
    ZeroTopK,
    #[error("memorisation interval must be at least 1")]
    ZeroInterval,
    #[error("capacity must hold at least 2 frames, got {0}")]
    CapacityTooSmall(usize),
    #[error("keys cover {keys} locations but values cover {values}")]
    LocationMismatch { keys: usize, values: usize },
}

pub type Result<T> = std::result::Result<T, MemoryError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    NegSqL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadConfig {
    pub top_k: usize,
    #[serde(default)]
    pub similarity: Similarity,
}

impl Default for ReadConfig {
    fn default() -> Self {
        ReadConfig {
            top_k: 50,
            similarity: Similarity::NegSqL2,
        }
    }
}

/// `A[i, j] = -‖q_i - k_j‖²` for query keys `[C_k, M]` and memory keys `[C_k, N]`,
/// evaluated as `2 q·k - ‖q‖² - ‖k‖²`.
pub fn affinity(query_keys: &Tensor, memory_keys: &Tensor) -> Result<Tensor> {
    let cross = query_keys.transpose()?.matmul(memory_keys)?.scale(2.0);
    let q_sq = query_keys.square().sum_axis(0)?.transpose()?; // [M, 1]
    let k_sq = memory_keys.square().sum_axis(0)?; // [1, N]
    Ok(cross.sub(&q_sq)?.sub(&k_sq)?)
}

/// Indices of the `k` largest entries of `row`, ties going to the lower index.
fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Row-wise softmax over each row's `k` largest affinities, zero elsewhere.
///
/// For `k >= N` this is the plain row softmax.
pub fn topk_normalize(affinity: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(MemoryError::ZeroTopK);
    }
    let &[m, n] = affinity.shape() else {
        return Err(TensorError::RankMismatch {
            op: "topk_normalize",
            expected: 2,
            got: affinity.shape().to_vec(),
        }
        .into());
    };
    if !affinity.all_finite() {
        return Err(TensorError::NonFinite("topk_normalize").into());
    }
    let k = k.min(n);
    let a = affinity.data();
    let mut weights = vec![0.0; m * n];
    let mut kept = Vec::with_capacity(m * k);
    for i in 0..m {
        let row = &a[i * n..][..n];
        let idx = top_k_indices(row, k);
        let max = row[idx[0]];
        let mut z = 0.0;
        for &j in &idx {
            let e = (row[j] - max).exp();
            weights[i * n + j] = e;
            z += e;
        }
        for &j in &idx {
            weights[i * n + j] /= z;
        }
        kept.extend(idx);
    }
    let w = weights.clone();
    Ok(Tensor::from_op(
        "topk_normalize",
        vec![m, n],
        weights,
        vec![affinity.clone()],
        Box::new(move |g, _| {
            let mut ga = vec![0.0; m * n];
            for i in 0..m {
                let idx = &kept[i * k..][..k];
                let dot: f64 = idx.iter().map(|&j| w[i * n + j] * g[i * n + j]).sum();
                for &j in idx {
                    ga[i * n + j] = w[i * n + j] * (g[i * n + j] - dot);
                }
            }
            vec![Some(ga)]
        }),
    ))
}

/// `out[:, i] = Σ_j weights[i, j] · values[:, j]` for weights `[M, N]`, values `[C_v, N]`.
pub fn readout(weights: &Tensor, memory_values: &Tensor) -> Result<Tensor> {
    Ok(memory_values.matmul(&weights.transpose()?)?)
}

/// Full read: affinity, top-k normalisation and readout, returning `[C_v, M]`.
pub fn read(query_keys: &Tensor, bank: &MemoryBank, config: &ReadConfig) -> Result<Tensor> {
    if bank.is_empty() {
        return Err(MemoryError::EmptyBank);
    }
    fused_read(query_keys, &bank.keys()?, &bank.values()?, config.top_k)
}

fn transposed(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// `readout(topk_normalize(affinity(q, k), top_k), v)` as a single op.
///
/// Only the kept entries of each query row are stored, so memory and
/// backward cost scale with `M·top_k` rather than `M·N`.
pub fn fused_read(query_keys: &Tensor, memory_keys: &Tensor, memory_values: &Tensor, top_k: usize) -> Result<Tensor> {
    if top_k == 0 {
        return Err(MemoryError::ZeroTopK);
    }
    let (&[ck, m], &[ck2, n], &[cv, n2]) = (query_keys.shape(), memory_keys.shape(), memory_values.shape()) else {
        return Err(TensorError::RankMismatch {
            op: "memory_read",
            expected: 2,
            got: query_keys.shape().to_vec(),
        }
        .into());
    };
    if ck != ck2 {
        return Err(TensorError::ShapeMismatch {
            op: "memory_read",
            lhs: query_keys.shape().to_vec(),
            rhs: memory_keys.shape().to_vec(),
        }
        .into());
    }
    if n != n2 {
        return Err(MemoryError::LocationMismatch { keys: n, values: n2 });
    }
    let a = {
        let _guard = crate::tensor::no_grad();
        affinity(query_keys, memory_keys)?
    };
    if !a.all_finite() {
        return Err(TensorError::NonFinite("memory_read").into());
    }
    let k = top_k.min(n);
    let a = a.data();
    let vt = transposed(memory_values.data(), cv, n); // [N, C_v]
    let mut kept = Vec::with_capacity(m * k);
    let mut weights = Vec::with_capacity(m * k);
    let mut out_t = vec![0.0; m * cv]; // [M, C_v]
    for i in 0..m {
        let row = &a[i * n..][..n];
        let idx = top_k_indices(row, k);
        let max = row[idx[0]];
        let e: Vec<f64> = idx.iter().map(|&j| (row[j] - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let dst = &mut out_t[i * cv..][..cv];
        for (&j, e) in idx.iter().zip(e) {
            let wij = e / z;
            dst.iter_mut().zip(&vt[j * cv..][..cv]).for_each(|(d, v)| *d += wij * v);
            weights.push(wij);
        }
        kept.extend(idx);
    }
    let data = transposed(&out_t, m, cv);
    let (q, mk) = (query_keys.clone(), memory_keys.clone());
    Ok(Tensor::from_op(
        "memory_read",
        vec![cv, m],
        data,
        vec![query_keys.clone(), memory_keys.clone(), memory_values.clone()],
        Box::new(move |g, needs| {
            let gt = transposed(g, cv, m); // [M, C_v]
            let qt = transposed(q.data(), ck, m); // [M, C_k]
            let kt = transposed(mk.data(), ck, n); // [N, C_k]
            let mut gq = vec![0.0; m * ck];
            let mut gk = vec![0.0; n * ck];
            let mut gv = vec![0.0; n * cv];
            let mut da = vec![0.0; k];
            for i in 0..m {
                let gi = &gt[i * cv..][..cv];
                let idx = &kept[i * k..][..k];
                let w = &weights[i * k..][..k];
                for (t, &j) in idx.iter().enumerate() {
                    da[t] = crate::tensor::dot(gi, &vt[j * cv..][..cv]);
                    if needs[2] {
                        gv[j * cv..][..cv].iter_mut().zip(gi).for_each(|(d, x)| *d += w[t] * x);
                    }
                }
                let mean: f64 = w.iter().zip(&da).map(|(w, d)| w * d).sum();
                let qi = &qt[i * ck..][..ck];
                for (t, &j) in idx.iter().enumerate() {
                    // d/dq (2 q·k - |q|² - |k|²) = 2 (k - q), and symmetrically for k.
                    let s = 2.0 * w[t] * (da[t] - mean);
                    let kj = &kt[j * ck..][..ck];
                    for c in 0..ck {
                        let diff = kj[c] - qi[c];
                        gq[i * ck + c] += s * diff;
                        gk[j * ck + c] -= s * diff;
                    }
                }
            }
            vec![
                needs[0].then(|| transposed(&gq, m, ck)),
                needs[1].then(|| transposed(&gk, n, ck)),
                needs[2].then(|| transposed(&gv, n, cv)),
            ]
        }),
    ))
}

/// Whether `frame_id` falls on the memorisation schedule. Frame 0 always does.
pub fn should_memorize(frame_id: usize, every: usize) -> bool {
    frame_id == 0 || (every > 0 && frame_id % every == 0)
}

#[derive(Clone, Debug)]
struct MemoryFrame {
    frame_id: usize,
    key: Tensor,
    value: Tensor,
}

/// Keys and values of memorised frames, flattened to `[C, H'·W']` per frame.
///
/// The first inserted frame carries the ground truth and is never evicted.
/// With a capacity, the oldest other frame is evicted first.
#[derive(Clone, Debug, Default)]
pub struct MemoryBank {
    frames: VecDeque<MemoryFrame>,
    capacity: Option<usize>,
}

fn flatten(t: &Tensor) -> Result<Tensor> {
    let c = *t.shape().first().ok_or_else(|| TensorError::RankMismatch {
        op: "memory_flatten",
        expected: 2,
        got: t.shape().to_vec(),
    })?;
    Ok(t.reshape(&[c, t.numel() / c.max(1)])?)
}

impl MemoryBank {
    pub fn new() -> MemoryBank {
        MemoryBank::default()
    }

    /// Bank holding at most `frames` memorised frames.
    pub fn with_capacity(frames: usize) -> Result<MemoryBank> {
        if frames < 2 {
            return Err(MemoryError::CapacityTooSmall(frames));
        }
        Ok(MemoryBank {
            frames: VecDeque::new(),
            capacity: Some(frames),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }

    /// Total number of memory locations N.
    pub fn num_locations(&self) -> usize {
        self.frames.iter().map(|f| f.key.shape()[1]).sum()
    }

    /// Inserts a frame unconditionally (subject to ordering and capacity).
    ///
    /// `key` is the frame's query key, reused verbatim as its memory key.
    pub fn insert(&mut self, frame_id: usize, key: &Tensor, value: &Tensor) -> Result<()> {
        if let Some(last) = self.frames.back() {
            if last.frame_id == frame_id || self.frames.iter().any(|f| f.frame_id == frame_id) {
                return Err(MemoryError::DuplicateFrame(frame_id));
            }
            if frame_id < last.frame_id {
                return Err(MemoryError::NonIncreasingFrame {
                    last: last.frame_id,
                    got: frame_id,
                });
            }
        }
        let (key, value) = (flatten(key)?, flatten(value)?);
        if key.shape()[1] != value.shape()[1] {
            return Err(MemoryError::LocationMismatch {
                keys: key.shape()[1],
                values: value.shape()[1],
            });
        }
        if let Some(cap) = self.capacity {
            while self.frames.len() >= cap {
                self.frames.remove(1);
            }
        }
        self.frames.push_back(MemoryFrame { frame_id, key, value });
        Ok(())
    }

    /// Inserts the frame if it is on the every-`every` schedule; returns whether it was.
    pub fn memorize(&mut self, frame_id: usize, key: &Tensor, value: &Tensor, every: usize) -> Result<bool> {
        if every == 0 {
            return Err(MemoryError::ZeroInterval);
        }
        if !should_memorize(frame_id, every) {
            return Ok(false);
        }
        self.insert(frame_id, key, value)?;
        Ok(true)
    }

    /// Memory keys `[C_k, N]`.
    pub fn keys(&self) -> Result<Tensor> {
        self.concat(|f| &f.key)
    }

    /// Memory values `[C_v, N]`.
    pub fn values(&self) -> Result<Tensor> {
        self.concat(|f| &f.value)
    }

    fn concat(&self, pick: impl Fn(&MemoryFrame) -> &Tensor) -> Result<Tensor> {
        if self.frames.is_empty() {
            return Err(MemoryError::EmptyBank);
        }
        if self.frames.len() == 1 {
            return Ok(pick(&self.frames[0]).clone());
        }
        let parts: Vec<Tensor> = self.frames.iter().map(|f| pick(f).clone()).collect();
        Ok(Tensor::concat(&parts, 1)?)
    }
}
