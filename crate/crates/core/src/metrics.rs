//! Regression metrics and error analysis.
//!
//! All reductions are plain left-to-right sums in input order, so results do
//! not depend on how a caller partitions work.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triage::quantile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: fewer than two points or zero variance")]
    CorrelationUndefined,
    #[error("no records at or above the tail cutoff")]
    EmptyTail,
}

fn check(y: &[f64], y_hat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percent.
    pub value: f64,
    /// Entries skipped because the target was exactly zero.
    pub excluded: usize,
}

/// Mean absolute percentage error over nonzero targets.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<Mape, MetricsError> {
    check(y, y_hat)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (a, b) in y.iter().zip(y_hat) {
        if *a == 0.0 {
            continue;
        }
        sum += ((a - b) / a).abs();
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(Mape {
        value: sum / used as f64 * 100.0,
        excluded: y.len() - used,
    })
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    let s: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y.len() as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    let s: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / y.len() as f64)
}

/// Pearson correlation coefficient.
pub fn pcc(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check(y, y_hat)?;
    if y.len() < 2 {
        return Err(MetricsError::CorrelationUndefined);
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = y_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let da = a - my;
        let db = b - mh;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::CorrelationUndefined);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// `None` when every target is zero.
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub mae: f64,
    pub mse: f64,
    /// `None` for fewer than two points or a constant side.
    pub pcc: Option<f64>,
}

impl EvalReport {
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self, MetricsError> {
        check(y, y_hat)?;
        let (mape_v, excluded) = match mape(y, y_hat) {
            Ok(m) => (Some(m.value), m.excluded),
            Err(_) => (None, y.len()),
        };
        Ok(EvalReport {
            n: y.len(),
            mape: mape_v,
            mape_excluded: excluded,
            mae: mae(y, y_hat)?,
            mse: mse(y, y_hat)?,
            pcc: pcc(y, y_hat).ok(),
        })
    }
}

/// One scored contract with its target, for error analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub byte_len: usize,
    pub y: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedErrorReport {
    pub bins: Vec<LengthBin>,
}

/// Errors per bytecode-length quartile.
///
/// Edges are the 25/50/75th length percentiles; bin `i` holds lengths in
/// `(edge[i-1], edge[i]]`, the first bin is closed below at the minimum and
/// the last runs to the maximum.
pub fn length_binned_errors(records: &[Prediction]) -> Result<BinnedErrorReport, MetricsError> {
    if records.len() < 4 {
        return Err(MetricsError::EmptyInput);
    }
    let lens: Vec<f64> = records.iter().map(|r| r.byte_len as f64).collect();
    let lo = lens.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut edges = vec![lo];
    for p in [25.0, 50.0, 75.0] {
        edges.push(quantile(&lens, p).map_err(|_| MetricsError::EmptyInput)?);
    }
    edges.push(hi);

    let mut groups: Vec<Vec<&Prediction>> = vec![Vec::new(); 4];
    for r in records {
        let len = r.byte_len as f64;
        let bin = (1..4).find(|&i| len <= edges[i]).map_or(3, |i| i - 1);
        groups[bin].push(r);
    }
    let bins = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let y: Vec<f64> = g.iter().map(|r| r.y).collect();
            let yh: Vec<f64> = g.iter().map(|r| r.y_hat).collect();
            LengthBin {
                lo: edges[i],
                hi: edges[i + 1],
                n: g.len(),
                mae: mae(&y, &yh).ok(),
                mape: mape(&y, &yh).ok().map(|m| m.value),
            }
        })
        .collect();
    Ok(BinnedErrorReport { bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPercentiles {
    pub median: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Percentiles of `|y - y_hat|`, using the triage quantile rule.
pub fn error_percentiles(y: &[f64], y_hat: &[f64]) -> Result<ErrorPercentiles, MetricsError> {
    check(y, y_hat)?;
    let abs: Vec<f64> = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).collect();
    let q = |p| quantile(&abs, p).map_err(|_| MetricsError::EmptyInput);
    Ok(ErrorPercentiles {
        median: q(50.0)?,
        p90: q(90.0)?,
        p95: q(95.0)?,
        p99: q(99.0)?,
    })
}

/// Metrics restricted to records whose target is at least `cutoff`.
pub fn tail_errors(records: &[Prediction], cutoff: f64) -> Result<EvalReport, MetricsError> {
    let (y, yh): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.y >= cutoff)
        .map(|r| (r.y, r.y_hat))
        .unzip();
    if y.is_empty() {
        return Err(MetricsError::EmptyTail);
    }
    EvalReport::compute(&y, &yh)
}
