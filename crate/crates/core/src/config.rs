//! Experiment configuration: one JSON document covering data, model, the
//! three training phase templates and the strategy × seed matrix.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SyntheticTaskSpec;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossKind};
use crate::nn::ModelSpec;
use crate::train::{ExperimentSpec, Init, OptimizerSpec, Phase, Strategy, TrainSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Used when no manifest is given.
    pub synthetic: SyntheticTaskSpec,
    /// JSON-lines manifest, relative to the working directory.
    pub manifest: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticTaskSpec::default(),
            manifest: None,
        }
    }
}

/// A training phase without the per-run fields (phase, seed, init).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub optimizer: OptimizerSpec,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default)]
    pub loss: LossConfig,
}

impl PhaseConfig {
    fn from_spec(s: TrainSpec) -> Self {
        Self {
            optimizer: s.optimizer,
            batch_size: s.batch_size,
            max_epochs: s.max_epochs,
            patience: s.patience,
            loss: s.loss,
        }
    }

    pub fn to_spec(&self, phase: Phase, kind: LossKind, seed: u64) -> TrainSpec {
        TrainSpec {
            phase,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            init: Init::Random,
            loss: LossConfig { kind, ..self.loss },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Seed of single runs (the `train` verb).
    pub seed: u64,
    pub step1: PhaseConfig,
    pub step2: PhaseConfig,
    /// Shared by the xent, joint_cam and joint_gaze baselines.
    pub baseline: PhaseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            step1: PhaseConfig::from_spec(TrainSpec::step1(0)),
            step2: PhaseConfig::from_spec(TrainSpec::step2(0)),
            baseline: PhaseConfig::from_spec(TrainSpec::baseline(Phase::BaselineXent, 0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Xent, Strategy::Mentor],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub experiment: MatrixConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON when they can and
    /// fall back to plain strings; every key must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
            }
            *slot = value;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthetic.validate()?;
        self.experiment_spec().validate()
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        let t = &self.train;
        ExperimentSpec {
            model: self.model.clone(),
            strategies: self.experiment.strategies.clone(),
            seeds: self.experiment.seeds.clone(),
            step1: t.step1.to_spec(Phase::Step1, LossKind::MentorPretrain, 0),
            step2: t.step2.to_spec(Phase::Step2, LossKind::Xent, 0),
            baseline: t.baseline.to_spec(Phase::BaselineXent, LossKind::Xent, 0),
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json_pretty().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_override_touches_only_the_seed() {
        let cfg = ExperimentConfig::default();
        let over = cfg.with_overrides(&["train.seed=7"]).unwrap();
        assert_eq!(over.train.seed, 7);
        let mut a = serde_json::to_value(&cfg).unwrap();
        let b = serde_json::to_value(&over).unwrap();
        a["train"]["seed"] = 7.into();
        assert_eq!(a, b);
    }

    #[test]
    fn nested_and_string_overrides() {
        let cfg = ExperimentConfig::default()
            .with_overrides(&[
                "experiment.strategies=[\"xent\"]",
                "data.manifest=some/where.jsonl",
                "model.base_width=4",
                "train.step2.optimizer.lr=0.01",
            ])
            .unwrap();
        assert_eq!(cfg.experiment.strategies, vec![Strategy::Xent]);
        assert_eq!(cfg.data.manifest, Some(PathBuf::from("some/where.jsonl")));
        assert_eq!(cfg.model.base_width, 4);
        assert_eq!(cfg.train.step2.optimizer.lr_at(0), 0.01);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for bad in ["{", "{\"model\":{\"depth\":\"x\"}}", "{\"nope\":1}"] {
            assert!(ExperimentConfig::from_json(bad).unwrap_err().is_config());
        }
        let cfg = ExperimentConfig::default();
        for o in ["train.sed=1", "train.seed", "model.depth=\"deep\""] {
            assert!(cfg.with_overrides(&[o]).unwrap_err().is_config(), "{o}");
        }
        let odd = cfg.with_overrides(&["model.input_extent=30"]).unwrap();
        assert!(odd.validate().unwrap_err().is_config());
    }
}
