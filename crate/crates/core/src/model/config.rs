use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Token ids run over the 256 byte values plus one reserved slot.
pub const VOCAB: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset '{other}' (expected paper|desk)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seg_len: usize,
    pub n_segments: usize,
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers_local: usize,
    pub n_layers_global: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub k_features: usize,
    pub lambda_s: f64,
    pub lambda_aux: f64,
    pub lambda_feature: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Preset::Desk)
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            seg_len: 512,
            n_segments: 32,
            vocab: VOCAB,
            d_model: 256,
            n_layers_local: 2,
            n_layers_global: 2,
            n_heads: 4,
            ffn_dim: 1024,
            dropout: 0.1,
            k_features: 7,
            lambda_s: 1.0,
            lambda_aux: 0.1,
            lambda_feature: 0.01,
            lr: 5e-4,
            weight_decay: 1e-4,
            clip_norm: 0.5,
            batch: 24,
            epochs: 20,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            seg_len: 64,
            n_segments: 8,
            d_model: 32,
            n_layers_local: 1,
            n_layers_global: 1,
            n_heads: 2,
            ffn_dim: 128,
            k_features: 7,
            ..ModelConfig::paper()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => ModelConfig::paper(),
            Preset::Desk => ModelConfig::desk(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Shape(m));
        if self.seg_len == 0 || self.n_segments == 0 {
            return bad("segment geometry must be positive".into());
        }
        if self.vocab != VOCAB {
            return bad(format!("vocab must be {VOCAB}, got {}", self.vocab));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.ffn_dim == 0 || self.k_features == 0 {
            return bad("ffn_dim and k_features must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        for (name, v) in [
            ("lambda_s", self.lambda_s),
            ("lambda_aux", self.lambda_aux),
            ("lambda_feature", self.lambda_feature),
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let p = ModelConfig::paper();
        assert_eq!((p.seg_len, p.n_segments, p.d_model), (512, 32, 256));
        assert_eq!((p.lambda_s, p.lambda_aux, p.lambda_feature), (1.0, 0.1, 0.01));
        assert_eq!(p.clip_norm, 0.5);
        assert_eq!(p.ffn_dim, 4 * p.d_model);
        let d = ModelConfig::desk();
        assert_eq!((d.seg_len, d.n_segments, d.d_model, d.n_heads, d.k_features), (64, 8, 32, 2, 7));
        assert_eq!((d.n_layers_local, d.n_layers_global), (1, 1));
        assert_eq!(d.ffn_dim, 4 * d.d_model);
        assert_eq!(d.lr, p.lr);
        p.validate().unwrap();
        d.validate().unwrap();
    }

    #[test]
    fn rejects_bad_heads() {
        let c = ModelConfig { n_heads: 3, ..ModelConfig::desk() };
        assert!(matches!(c.validate(), Err(ModelError::Shape(_))));
        let c = ModelConfig { lambda_aux: -1.0, ..ModelConfig::desk() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn preset_parse() {
        assert_eq!("Desk".parse::<Preset>().unwrap(), Preset::Desk);
        assert!("huge".parse::<Preset>().is_err());
    }
}
