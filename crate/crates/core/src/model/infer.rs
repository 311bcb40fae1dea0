use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::forward;
use super::params::Parameters;
use super::stats::FeatureStats;
use super::ModelError;
use crate::bytecode::CanonicalBytecode;
use crate::records::{ScoreRecord, ScoreSource};

/// One contract to score.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub chain: &'a str,
    pub address: &'a str,
    pub code: &'a CanonicalBytecode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub contracts: usize,
    pub seconds: f64,
    pub contracts_per_second: f64,
    pub ms_per_contract: f64,
}

/// Score every input with the eval-mode forward pass. Each contract is
/// processed on its own, so `batch` only sets the progress-logging
/// granularity and never changes a score.
pub fn score_corpus(
    inputs: &[ScoreInput<'_>],
    p: &Parameters,
    stats: &FeatureStats,
    cfg: &ModelConfig,
    batch: usize,
) -> Result<(Vec<ScoreRecord>, Throughput), ModelError> {
    let started = Instant::now();
    let mut out = Vec::with_capacity(inputs.len());
    for (b, chunk) in inputs.chunks(batch.max(1)).enumerate() {
        let t0 = Instant::now();
        for inp in chunk {
            let tokens = inp.code.segment(cfg.seg_len, cfg.n_segments);
            let o = forward(&tokens, p, stats, cfg)?;
            out.push(ScoreRecord {
                chain: inp.chain.to_string(),
                address: inp.address.to_string(),
                canonical_hash: inp.code.canonical_hash,
                score: o.s_hat,
                source: ScoreSource::Model,
            });
        }
        log::debug!(
            "batch {b}: {} contracts, {:.3} ms/contract",
            chunk.len(),
            1e3 * t0.elapsed().as_secs_f64() / chunk.len() as f64
        );
    }
    let seconds = started.elapsed().as_secs_f64();
    let n = inputs.len();
    let tp = Throughput {
        contracts: n,
        seconds,
        contracts_per_second: if seconds > 0.0 { n as f64 / seconds } else { f64::INFINITY },
        ms_per_contract: if n > 0 { 1e3 * seconds / n as f64 } else { 0.0 },
    };
    log::info!(
        "scored {} contracts in {:.2}s ({:.3} ms/contract, {:.1}/s)",
        n,
        seconds,
        tp.ms_per_contract,
        tp.contracts_per_second
    );
    Ok((out, tp))
}
