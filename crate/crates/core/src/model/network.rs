//! The hierarchical forward pass and its reverse.
//!
//! Only segments with `mask = 1` are encoded. Their summaries (mean of the
//! local states) get the chunk position of their original slot, attend to
//! each other in the global encoder and are mean-pooled into the contract
//! vector. Masked-out segments are never read.

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::{self, Dropout, EncoderCache};
use super::params::Parameters;
use super::stats::FeatureStats;
use super::ModelError;
use crate::bytecode::segment::TokenSequence;

pub const POOL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardOutput {
    pub s_hat: f64,
    pub s_tool_hat: f64,
    pub f_hat: Vec<f64>,
    pub v_contract: Vec<f64>,
}

/// Eval runs without dropout. Train draws dropout masks from a generator
/// seeded with `seed`, so a forward pass is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

fn check_tokens(tokens: &[u16], vocab: usize) -> Result<(), ModelError> {
    match tokens.iter().find(|&&t| t as usize >= vocab) {
        Some(&t) => Err(ModelError::Vocab(t)),
        None => Ok(()),
    }
}

fn embed_rows(tokens: &[u16], p: &Parameters) -> Array2<f64> {
    let mut x = p.p_local.clone();
    for (mut row, &t) in x.rows_mut().into_iter().zip(tokens) {
        row += &p.embed.row(t as usize);
    }
    x
}

/// `Encoder(Embed(x) + P_local)` for one segment of `L` tokens, eval mode.
pub fn local_encode(tokens: &[u16], p: &Parameters, cfg: &ModelConfig) -> Result<Array2<f64>, ModelError> {
    if tokens.len() != cfg.seg_len {
        return Err(ModelError::Shape(format!("segment has {} tokens, expected {}", tokens.len(), cfg.seg_len)));
    }
    check_tokens(tokens, cfg.vocab)?;
    let (h, _) = layers::encoder_forward(embed_rows(tokens, p), &p.local, cfg.n_heads, &mut Dropout::eval());
    Ok(h)
}

/// Global encoder over up to `N` segment summaries placed at chunk slots
/// `0..rows`, eval mode.
pub fn global_encode(summaries: &Array2<f64>, p: &Parameters, cfg: &ModelConfig) -> Result<Array2<f64>, ModelError> {
    let n = summaries.nrows();
    if n == 0 || n > cfg.n_segments || summaries.ncols() != cfg.d_model {
        return Err(ModelError::Shape(format!(
            "summaries are {}x{}, expected 1..={} x {}",
            n,
            summaries.ncols(),
            cfg.n_segments,
            cfg.d_model
        )));
    }
    let x = summaries + &p.p_chunk.slice(ndarray::s![..n, ..]);
    Ok(layers::encoder_forward(x, &p.global, cfg.n_heads, &mut Dropout::eval()).0)
}

/// `Σ_i H_i·M_i / (Σ_i M_i + ε)`.
pub fn masked_mean_pool(h: &Array2<f64>, mask: &[bool]) -> Result<Array1<f64>, ModelError> {
    if mask.len() != h.nrows() {
        return Err(ModelError::Shape(format!("mask has {} flags for {} rows", mask.len(), h.nrows())));
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(ModelError::EmptyContract);
    }
    let mut acc = Array1::zeros(h.ncols());
    for (row, _) in h.rows().into_iter().zip(mask).filter(|(_, m)| **m) {
        acc += &row;
    }
    Ok(acc / (count as f64 + POOL_EPS))
}

struct SegmentCache {
    tokens: Vec<u16>,
    drop: Option<Array2<f64>>,
    enc: EncoderCache,
}

pub(crate) struct Cache {
    slots: Vec<usize>,
    segments: Vec<SegmentCache>,
    global_drop: Option<Array2<f64>>,
    global: EncoderCache,
    v: Array2<f64>,
    rec_u: Array2<f64>,
    rec_g: Array2<f64>,
    z: Array2<f64>,
    head_u: Array2<f64>,
    head_g: Array2<f64>,
}

fn validate(t: &TokenSequence, cfg: &ModelConfig, stats: &FeatureStats) -> Result<Vec<usize>, ModelError> {
    if t.seg_len != cfg.seg_len || t.n_segments != cfg.n_segments {
        return Err(ModelError::Shape(format!(
            "token sequence is {}x{}, model expects {}x{}",
            t.n_segments, t.seg_len, cfg.n_segments, cfg.seg_len
        )));
    }
    if stats.k() != cfg.k_features {
        return Err(ModelError::Shape(format!("stats hold {} features, model {}", stats.k(), cfg.k_features)));
    }
    let slots: Vec<usize> = (0..t.n_segments).filter(|&i| t.mask[i]).collect();
    if slots.is_empty() {
        return Err(ModelError::EmptyContract);
    }
    for &i in &slots {
        check_tokens(t.segment(i), cfg.vocab)?;
    }
    Ok(slots)
}

pub(crate) fn forward_cached(
    t: &TokenSequence,
    p: &Parameters,
    stats: &FeatureStats,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<(ForwardOutput, Cache), ModelError> {
    let slots = validate(t, cfg, stats)?;
    let mut rng = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut drop = Dropout { p: cfg.dropout, rng: rng.as_mut() };
    let d = cfg.d_model;

    let mut segments = Vec::with_capacity(slots.len());
    let mut summaries = Array2::zeros((slots.len(), d));
    for (r, &i) in slots.iter().enumerate() {
        let tokens = t.segment(i).to_vec();
        let mut x = embed_rows(&tokens, p);
        let dmask = drop.apply(&mut x);
        let (h, enc) = layers::encoder_forward(x, &p.local, cfg.n_heads, &mut drop);
        summaries.row_mut(r).assign(&h.mean_axis(Axis(0)).expect("L > 0"));
        segments.push(SegmentCache { tokens, drop: dmask, enc });
    }

    let mut g_in = summaries;
    for (mut row, &i) in g_in.rows_mut().into_iter().zip(&slots) {
        row += &p.p_chunk.row(i);
    }
    let global_drop = drop.apply(&mut g_in);
    let (gh, global) = layers::encoder_forward(g_in, &p.global, cfg.n_heads, &mut drop);
    let v = masked_mean_pool(&gh, &vec![true; gh.nrows()])?.insert_axis(Axis(0));

    let rec_u = layers::linear(&v, &p.rec1);
    let rec_g = layers::gelu(&rec_u);
    let f = layers::linear(&rec_g, &p.rec2);
    let f_hat: Vec<f64> = f.iter().copied().collect();
    let s_tool_hat = stats.zscore(&f_hat)?;
    let z = concatenate![Axis(1), v, f, Array2::from_elem((1, 1), s_tool_hat)];
    let head_u = layers::linear(&z, &p.head1);
    let head_g = layers::gelu(&head_u);
    let s_hat = layers::linear(&head_g, &p.head2)[[0, 0]];

    let out = ForwardOutput {
        s_hat,
        s_tool_hat,
        f_hat,
        v_contract: v.iter().copied().collect(),
    };
    let cache = Cache { slots, segments, global_drop, global, v, rec_u, rec_g, z, head_u, head_g };
    Ok((out, cache))
}

/// Eval-mode forward pass.
pub fn forward(t: &TokenSequence, p: &Parameters, stats: &FeatureStats, cfg: &ModelConfig) -> Result<ForwardOutput, ModelError> {
    forward_cached(t, p, stats, cfg, Mode::Eval).map(|(o, _)| o)
}

/// Loss gradients with respect to one example's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub d_s_hat: f64,
    pub d_s_tool: f64,
    pub d_f: Vec<f64>,
}

/// Accumulate parameter gradients for one example into `g`.
pub(crate) fn backward(c: &Cache, p: &Parameters, stats: &FeatureStats, cfg: &ModelConfig, dout: &OutputGrad, g: &mut Parameters) {
    let d = cfg.d_model;
    let k = cfg.k_features;

    let dy = Array2::from_elem((1, 1), dout.d_s_hat);
    let dhg = layers::linear_back(&c.head_g, &dy, &p.head2, &mut g.head2);
    let dhu = layers::gelu_back(&c.head_u, &dhg);
    let dz = layers::linear_back(&c.z, &dhu, &p.head1, &mut g.head1);

    let d_s_tool = dout.d_s_tool + dz[[0, d + k]];
    let mut df = Array2::zeros((1, k));
    for j in 0..k {
        df[[0, j]] = dout.d_f[j] + dz[[0, d + j]] + d_s_tool / stats.sigma[j];
    }
    let drg = layers::linear_back(&c.rec_g, &df, &p.rec2, &mut g.rec2);
    let dru = layers::gelu_back(&c.rec_u, &drg);
    let mut dv = layers::linear_back(&c.v, &dru, &p.rec1, &mut g.rec1);
    dv += &dz.slice(ndarray::s![.., ..d]);

    let n = c.slots.len();
    let dgh = Array2::from_shape_fn((n, d), |(_, j)| dv[[0, j]] / (n as f64 + POOL_EPS));
    let dg_in = layers::encoder_backward(&dgh, &c.global, &p.global, &mut g.global);
    let dg_in = match &c.global_drop {
        Some(m) => dg_in * m,
        None => dg_in,
    };
    let inv_l = 1.0 / cfg.seg_len as f64;
    for (r, (&slot, seg)) in c.slots.iter().zip(&c.segments).enumerate() {
        let ds = dg_in.row(r);
        {
            let mut pc = g.p_chunk.row_mut(slot);
            pc += &ds;
        }
        let dh = Array2::from_shape_fn((cfg.seg_len, d), |(_, j)| ds[j] * inv_l);
        let dx = layers::encoder_backward(&dh, &seg.enc, &p.local, &mut g.local);
        let dx = match &seg.drop {
            Some(m) => dx * m,
            None => dx,
        };
        g.p_local += &dx;
        for (row, &tok) in dx.rows().into_iter().zip(&seg.tokens) {
            let mut e = g.embed.row_mut(tok as usize);
            e += &row;
        }
    }
}
