//! Pipeline configuration, read from TOML. Every field has a default so a
//! partial file (or none at all) is valid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeaturizeConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::ingest::{ColumnSchema, FilterConfig, SplitDates};
use crate::pipeline::TrainConfig;
use crate::synthlab::SynthScenario;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Calibrate on the latest slice of the training period; models are fit
    /// without it.
    #[default]
    Holdout,
    /// Calibrate on the typical and atypical test splits together. This uses
    /// test labels and is only for reproducing test-set calibrated results.
    TestSplits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTrainingSet {
    pub name: String,
    pub sigmas: Vec<f64>,
}

impl Default for SynthTrainingSet {
    fn default() -> Self {
        Self {
            name: "pool08-16".into(),
            sigmas: (8..=16).map(|k| k as f64 / 100.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scenario: SynthScenario,
    pub training_sets: Vec<SynthTrainingSet>,
    pub sigma_grid: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenario: SynthScenario::default(),
            training_sets: vec![SynthTrainingSet::default()],
            sigma_grid: crate::synthlab::default_sigma_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema: ColumnSchema,
    pub filter: FilterConfig,
    pub split: SplitDates,
    pub featurize: FeaturizeConfig,
    /// Constant risk-free rate used when no rate file is given.
    pub rate: f64,
    pub train: TrainConfig,
    pub calibration: CalibrationMode,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: ColumnSchema::default(),
            filter: FilterConfig::default(),
            split: SplitDates::default(),
            featurize: FeaturizeConfig::default(),
            rate: 0.06,
            train: TrainConfig::default(),
            calibration: CalibrationMode::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.gbt.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn round_trip_and_partial_override() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);

        let partial = PipelineConfig::from_toml("[train.gbt]\nn_estimators = 12\n").unwrap();
        assert_eq!(partial.train.gbt.n_estimators, 12);
        assert_eq!(partial.train.gbt.max_depth, 7);
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(PipelineConfig::from_toml("[train.gbt]\nsubsample = 0.0\n").is_err());
    }
}
