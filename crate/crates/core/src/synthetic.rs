//! Seeded generator of synthetic runtime bytecode with known targets.
//!
//! Each contract is a valid instruction stream (no truncated pushes) built
//! from filler instructions and dispatcher-style selector checks
//! `PUSH4 sel EQ PUSH2 dest JUMPI`. The score is an affine function of byte
//! length and PUSH4 count plus Gaussian noise whose standard deviation is a
//! fixed fraction of the clean score's spread. Tool features are other
//! affine maps of the same two quantities with a little independent noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bytecode::decode;
use crate::bytecode::opcode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Noise standard deviation as a fraction of the clean score's std.
    pub noise_frac: f64,
    pub k_features: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 5000,
            min_len: 32,
            max_len: 512,
            noise_frac: 0.1,
            k_features: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticContract {
    pub code: Vec<u8>,
    pub byte_len: usize,
    pub push4_count: usize,
    pub s_clean: f64,
    pub s: f64,
    pub features: Vec<f64>,
}

/// Clean score: `2 + len/256 + push4/16`.
pub fn clean_score(byte_len: usize, push4_count: usize) -> f64 {
    2.0 + byte_len as f64 / 256.0 + push4_count as f64 / 16.0
}

const FILLER: [u8; 16] = [
    0x01, 0x02, 0x03, 0x04, 0x10, 0x11, 0x14, 0x15, 0x16, 0x19, 0x35, 0x36, 0x50, 0x51, 0x52, 0x54,
];

fn push_filler(rng: &mut ChaCha8Rng, code: &mut Vec<u8>, room: usize) {
    let r: f64 = rng.gen();
    if r < 0.2 && room >= 2 {
        code.push(opcode::PUSH1);
        code.push(rng.gen());
    } else if r < 0.3 && room >= 3 {
        code.push(opcode::PUSH1 + 1);
        code.push(rng.gen());
        code.push(rng.gen());
    } else {
        code.push(FILLER[rng.gen_range(0..FILLER.len())]);
    }
}

const SELECTOR_BLOCK: usize = 10;

fn build_code(rng: &mut ChaCha8Rng, len: usize, selectors: usize) -> Vec<u8> {
    let mut code = Vec::with_capacity(len);
    let filler_budget = len - selectors * SELECTOR_BLOCK;
    // spread selector blocks at random points of the filler stream
    let mut cuts: Vec<usize> = (0..selectors).map(|_| rng.gen_range(0..=filler_budget)).collect();
    cuts.sort_unstable();
    let mut filler_done = 0;
    let mut next = 0;
    while filler_done < filler_budget || next < cuts.len() {
        while next < cuts.len() && cuts[next] <= filler_done {
            code.push(opcode::PUSH4);
            code.extend(rng.gen::<[u8; 4]>());
            code.push(0x14); // EQ
            code.push(opcode::PUSH1 + 1);
            code.extend(rng.gen::<[u8; 2]>());
            code.push(0x57); // JUMPI
            next += 1;
        }
        if filler_done < filler_budget {
            let before = code.len();
            push_filler(rng, &mut code, filler_budget - filler_done);
            filler_done += code.len() - before;
        }
    }
    code
}

/// Fixed coefficient rows `(len/256, push4/16, intercept)` for the tool
/// features; rows repeat cyclically past seven.
const FEATURE_MAP: [(f64, f64, f64); 7] = [
    (1.0, 0.0, 0.5),
    (0.0, 1.0, 0.0),
    (1.0, 1.0, 1.0),
    (0.5, -0.2, 2.0),
    (-0.3, 0.8, 1.5),
    (2.0, 0.5, 0.0),
    (0.1, 0.1, 0.3),
];

/// Noise-free score and tool features of arbitrary code under the
/// synthetic ground truth.
pub fn exact_targets(code: &[u8], k_features: usize) -> (f64, Vec<f64>) {
    let push4 = decode::decode(code).iter().filter(|i| i.opcode == opcode::PUSH4).count();
    let a = code.len() as f64 / 256.0;
    let b = push4 as f64 / 16.0;
    let f = (0..k_features)
        .map(|k| {
            let (wa, wb, w0) = FEATURE_MAP[k % FEATURE_MAP.len()];
            wa * a + wb * b + w0
        })
        .collect();
    (clean_score(code.len(), push4), f)
}

pub fn generate(cfg: &SyntheticConfig) -> Vec<SyntheticContract> {
    assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len, "invalid length range");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<SyntheticContract> = (0..cfg.n)
        .map(|_| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let max_sel = (len - 1) / SELECTOR_BLOCK;
            let sel = rng.gen_range(0..=max_sel.min(40));
            let code = build_code(&mut rng, len, sel);
            let push4_count = decode::decode(&code)
                .iter()
                .filter(|i| i.opcode == opcode::PUSH4)
                .count();
            SyntheticContract {
                byte_len: code.len(),
                s_clean: clean_score(code.len(), push4_count),
                s: 0.0,
                features: Vec::new(),
                push4_count,
                code,
            }
        })
        .collect();

    let n = out.len().max(1) as f64;
    let mean = out.iter().map(|c| c.s_clean).sum::<f64>() / n;
    let std = (out.iter().map(|c| (c.s_clean - mean).powi(2)).sum::<f64>() / n).sqrt();
    let noise = Normal::new(0.0, (cfg.noise_frac * std).max(0.0)).expect("finite std");
    let fnoise = Normal::new(0.0, 0.02).expect("finite std");
    for c in &mut out {
        c.s = c.s_clean + noise.sample(&mut rng);
        let a = c.byte_len as f64 / 256.0;
        let b = c.push4_count as f64 / 16.0;
        c.features = (0..cfg.k_features)
            .map(|k| {
                let (wa, wb, w0) = FEATURE_MAP[k % FEATURE_MAP.len()];
                wa * a + wb * b + w0 + fnoise.sample(&mut rng)
            })
            .collect();
    }
    out
}
