use serde::{Deserialize, Serialize};

use super::ModelError;

pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-feature mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl FeatureStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self, ModelError> {
        if mu.len() != sigma.len() {
            return Err(ModelError::Shape(format!(
                "mu has {} entries, sigma {}",
                mu.len(),
                sigma.len()
            )));
        }
        let sigma = sigma.into_iter().map(|s| s.max(SIGMA_FLOOR)).collect();
        Ok(FeatureStats { mu, sigma })
    }

    /// Population mean and standard deviation of each column.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, k: usize) -> Result<Self, ModelError> {
        let mut n = 0usize;
        let mut sum = vec![0.0; k];
        let mut rows_seen: Vec<&[f64]> = Vec::new();
        for r in rows {
            if r.len() != k {
                return Err(ModelError::Shape(format!("feature row has {} entries, expected {k}", r.len())));
            }
            for (s, x) in sum.iter_mut().zip(r) {
                *s += x;
            }
            rows_seen.push(r);
            n += 1;
        }
        if n == 0 {
            return Err(ModelError::Shape("no rows to compute feature statistics".into()));
        }
        let mu: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; k];
        for r in rows_seen {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mu) {
                *v += (x - m) * (x - m);
            }
        }
        let sigma = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        FeatureStats::new(mu, sigma)
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn zscore(&self, f: &[f64]) -> Result<f64, ModelError> {
        if f.len() != self.k() {
            return Err(ModelError::Shape(format!("{} features, stats hold {}", f.len(), self.k())));
        }
        Ok(f.iter()
            .zip(&self.mu)
            .zip(&self.sigma)
            .map(|((x, m), s)| (x - m) / s)
            .sum())
    }
}
