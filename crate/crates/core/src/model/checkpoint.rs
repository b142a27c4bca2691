//! Checkpoint directories:
//!
//! ```text
//! config.json            model configuration
//! state.json             step counter and training configuration
//! params/<name>.{bin,json}
//! optimizer.json         optimiser bookkeeping (names, step count, kind)
//! optimizer/{m,v}.<name>.{bin,json}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gsfm, GsfmConfig, ModelError, OptimizerState, Result, TrainConfig};
use crate::nn::Module;
use crate::tensor::{load_tensor, save_tensor, DType, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub step: usize,
    pub train_config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    kind: super::OptimizerKind,
    t: u64,
    names: Vec<String>,
    has_second: bool,
}

/// Writes the model (and optionally optimiser buffers) to `dir`.
///
/// Use `DType::Float64` when training will be resumed from the checkpoint;
/// float32 halves the size but rounds the weights.
pub fn save_checkpoint(dir: &Path, model: &Gsfm, optimizer: Option<&OptimizerState>, state: &CheckpointState, dtype: DType) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&model.config)?)?;
    fs::write(dir.join("state.json"), serde_json::to_string_pretty(state)?)?;
    for (name, t) in model.named_params() {
        save_tensor(&params_dir.join(&name), &t, dtype)?;
    }
    if let Some(opt) = optimizer {
        let odir = dir.join("optimizer");
        fs::create_dir_all(&odir)?;
        let meta = OptimizerMeta {
            kind: opt.kind,
            t: opt.t,
            names: opt.names.clone(),
            has_second: !opt.second.is_empty(),
        };
        fs::write(dir.join("optimizer.json"), serde_json::to_string_pretty(&meta)?)?;
        for (i, name) in opt.names.iter().enumerate() {
            let n = opt.first[i].len();
            save_tensor(&odir.join(format!("m.{name}")), &Tensor::new(&[n], opt.first[i].clone())?, DType::Float64)?;
            if meta.has_second {
                save_tensor(&odir.join(format!("v.{name}")), &Tensor::new(&[n], opt.second[i].clone())?, DType::Float64)?;
            }
        }
    }
    Ok(())
}

/// Rebuilds the model from `config.json` and fills every parameter by name.
pub fn load_checkpoint(dir: &Path) -> Result<(Gsfm, Option<OptimizerState>, CheckpointState)> {
    let config: GsfmConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let state: CheckpointState = match fs::read_to_string(dir.join("state.json")) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => CheckpointState::default(),
        Err(e) => return Err(e.into()),
    };
    let mut model = Gsfm::new(config)?;
    let mut failure: Option<ModelError> = None;
    model.visit_params_mut("", &mut |name, p| {
        if failure.is_some() {
            return;
        }
        match load_tensor(&dir.join("params").join(&name)) {
            Ok(t) if t.shape() == p.shape() => *p = t.with_grad(),
            Ok(t) => {
                failure = Some(ModelError::CheckpointMismatch(format!(
                    "{name}: stored shape {:?}, model expects {:?}",
                    t.shape(),
                    p.shape()
                )))
            }
            Err(e) => failure = Some(ModelError::CheckpointMismatch(format!("{name}: {e}"))),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let optimizer = match fs::read_to_string(dir.join("optimizer.json")) {
        Ok(s) => {
            let meta: OptimizerMeta = serde_json::from_str(&s)?;
            let odir = dir.join("optimizer");
            let mut first = Vec::new();
            let mut second = Vec::new();
            for name in &meta.names {
                first.push(load_tensor(&odir.join(format!("m.{name}")))?.to_vec());
                if meta.has_second {
                    second.push(load_tensor(&odir.join(format!("v.{name}")))?.to_vec());
                }
            }
            Some(OptimizerState {
                kind: meta.kind,
                t: meta.t,
                names: meta.names,
                first,
                second,
            })
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((model, optimizer, state))
}
