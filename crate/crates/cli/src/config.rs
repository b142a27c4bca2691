//! Run configuration: a JSON document with dotted-path overrides.

use std::path::Path;

use gsfm::experiment::{ablation_train_config, module_variants, placement_variants, BenchmarkConfig, Variant};
use gsfm::model::{GsfmConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Boundary tolerance in pixels; `null` uses 0.8% of the image diagonal.
    pub tolerance: Option<usize>,
    /// Worker threads for sequence-level parallelism; 0 picks the core count.
    pub jobs: usize,
    pub save_masks: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance: None,
            jobs: 0,
            save_masks: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    /// Training budget of every grid cell; its seed is replaced by the cell seed.
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: module_variants().into_iter().chain(placement_variants()).map(|v| v.name).collect(),
            seeds: vec![0, 1, 2],
            train: ablation_train_config(),
        }
    }
}

impl AblationConfig {
    pub fn resolve_variants(&self) -> Result<Vec<Variant>, CliError> {
        self.variants
            .iter()
            .map(|n| Variant::by_name(n).ok_or_else(|| CliError::Usage(format!("unknown ablation variant `{n}`"))))
            .collect()
    }
}

/// Everything a command needs besides paths. `seed` drives weight
/// initialisation and batch sampling; `data.synth.seed` drives generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: BenchmarkConfig,
    pub model: GsfmConfig,
    pub train: TrainConfig,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: BenchmarkConfig::default(),
            model: GsfmConfig::default(),
            train: TrainConfig::default(),
            checkpoint_every: 100,
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value` overrides
    /// and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            merge(&mut doc, file);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
        cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.data.synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.ablation.resolve_variants()?;
        Ok(cfg)
    }

    /// Model configuration with the run seed applied.
    pub fn seeded_model(&self) -> GsfmConfig {
        GsfmConfig {
            init_seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn seeded_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

fn merge(base: &mut Value, other: Value) {
    match (base, other) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise. `on`/`off` set booleans, and
/// `off` on any other field means `null` (a disabled module).
pub fn apply_override(doc: &mut Value, arg: &str) -> Result<(), CliError> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{arg}` is not of the form key=value")))?;
    let mut slot = &mut *doc;
    for key in path.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| CliError::Usage(format!("unknown configuration key `{path}`")))?;
    }
    *slot = match (raw, &*slot) {
        ("on", Value::Bool(_)) => Value::Bool(true),
        ("off", Value::Bool(_)) => Value::Bool(false),
        ("off", _) => Value::Null,
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &[
                "model.lfm=off".into(),
                "model.hfm=full".into(),
                "model.boundary_branch=off".into(),
                "train.steps=7".into(),
                "model.input_size=[32,32]".into(),
                "ablation.seeds=[4]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.lfm, None);
        assert_eq!(cfg.model.hfm, Some(gsfm::spectral::FilterMode::Full));
        assert!(!cfg.model.boundary_branch);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.model.input_size, (32, 32));
        assert_eq!(cfg.ablation.seeds, vec![4]);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        assert!(matches!(RunConfig::load(None, &["model.nope=1".into()]), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::load(None, &["train.steps".into()]), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::load(None, &["model.lfm=sideways".into()]), Err(CliError::Usage(_))));
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::load(None, &["seed=9".into()]).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
