use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::Parameters;
use super::stats::FeatureStats;
use super::ModelError;
use crate::bytecode::HASH_ALGORITHM;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing JSON container for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub hash_algorithm: String,
    pub config: ModelConfig,
    pub stats: FeatureStats,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn new(cfg: &ModelConfig, stats: &FeatureStats, params: &Parameters) -> Self {
        let tensors = params
            .named()
            .into_iter()
            .map(|(n, t)| {
                let (r, c) = t.dim();
                (n, TensorData { shape: [r, c], data: t.iter().copied().collect() })
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            hash_algorithm: HASH_ALGORITHM.to_string(),
            config: cfg.clone(),
            stats: stats.clone(),
            tensors,
        }
    }

    /// Rebuild parameters, checking every tensor name and shape.
    pub fn parameters(&self) -> Result<Parameters, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {}", self.version)));
        }
        self.config.validate()?;
        let mut p = Parameters::init(&self.config);
        let expected = p.named().len();
        if self.tensors.len() != expected {
            return Err(ModelError::Format(format!("{} tensors, expected {expected}", self.tensors.len())));
        }
        for (name, slot) in p.named_mut() {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?;
            if t.shape != [slot.nrows(), slot.ncols()] {
                return Err(ModelError::Shape(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape,
                    slot.dim()
                )));
            }
            *slot = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| ModelError::Format(format!("tensor {name}: {e}")))?;
        }
        if !p.is_finite() {
            return Err(ModelError::Numeric("checkpoint holds non-finite parameters".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(self).map_err(|e| ModelError::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))
    }
}
