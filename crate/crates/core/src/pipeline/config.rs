use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::enrichment::LiftConfig;
use crate::features::FeatureConfig;
use crate::model::{ModelConfig, Preset};
use crate::triage::{QueueConfig, SecondaryWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Abort when more than this fraction of rows is malformed.
    pub abort_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { abort_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// train : val : test, by family count.
    pub ratios: [u32; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [7, 2, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub batch: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { batch: 200 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Chain whose p99 cutoff is applied elsewhere; defaults to the first
    /// chain in sorted order.
    pub source: Option<String>,
}

/// Everything a run depends on. Loaded from TOML; every table and key is
/// optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub preset: Preset,
    /// Keys overriding the preset's model configuration.
    pub model: toml::Table,
    pub features: FeatureConfig,
    pub queues: QueueConfig,
    pub secondary: SecondaryWeights,
    pub enrichment: LiftConfig,
    pub ingest: IngestConfig,
    pub split: SplitConfig,
    pub score: ScoreConfig,
    pub transfer: TransferConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            preset: Preset::Desk,
            model: toml::Table::new(),
            features: FeatureConfig::default(),
            queues: QueueConfig::default(),
            secondary: SecondaryWeights::default(),
            enrichment: LiftConfig::default(),
            ingest: IngestConfig::default(),
            split: SplitConfig::default(),
            score: ScoreConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| PipelineError::Validation(format!("config: {e}")))?;
        cfg.model_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        PipelineConfig::from_toml(&text)
    }

    /// Preset, then `[model]` overrides, then the top-level seed.
    pub fn model_config(&self) -> Result<ModelConfig, PipelineError> {
        let base = ModelConfig::preset(self.preset);
        let mut table = toml::Table::try_from(&base)
            .map_err(|e| PipelineError::Validation(format!("model config: {e}")))?;
        for (k, v) in &self.model {
            if !table.contains_key(k) {
                return Err(PipelineError::Validation(format!("unknown model key '{k}'")));
            }
            table.insert(k.clone(), v.clone());
        }
        table.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        let cfg: ModelConfig = table
            .try_into()
            .map_err(|e| PipelineError::Validation(format!("model config: {e}")))?;
        cfg.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
        Ok(cfg)
    }
}
