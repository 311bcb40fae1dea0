use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::loss::{joint_loss, LossBreakdown, Target};
use super::network::{backward, forward_cached, ForwardOutput, Mode};
use super::optim::{clip_global_norm, AdamW};
use super::params::Parameters;
use super::stats::FeatureStats;
use super::ModelError;
use crate::bytecode::segment::TokenSequence;
use crate::metrics::EvalReport;

/// Loss values above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: TokenSequence,
    pub target: Target,
    pub byte_len: usize,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn example_mode(mode: Mode, i: usize) -> Mode {
    match mode {
        Mode::Eval => Mode::Eval,
        Mode::Train { seed } => Mode::Train { seed: mix(seed, i as u64, 0x51) },
    }
}

/// Batch loss without gradients. Example `i` uses dropout seed
/// derived from `(seed, i)`, matching [`loss_and_gradients`].
pub fn batch_loss(
    p: &Parameters,
    stats: &FeatureStats,
    cfg: &ModelConfig,
    batch: &[&Example],
    mode: Mode,
) -> Result<LossBreakdown, ModelError> {
    let mut outs = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        outs.push(forward_cached(&ex.tokens, p, stats, cfg, example_mode(mode, i))?.0);
    }
    let targets: Vec<&Target> = batch.iter().map(|e| &e.target).collect();
    Ok(joint_loss(&outs, &targets, cfg)?.0)
}

pub fn loss_and_gradients(
    p: &Parameters,
    stats: &FeatureStats,
    cfg: &ModelConfig,
    batch: &[&Example],
    mode: Mode,
) -> Result<(LossBreakdown, Parameters), ModelError> {
    let mut outs = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let (o, c) = forward_cached(&ex.tokens, p, stats, cfg, example_mode(mode, i))?;
        outs.push(o);
        caches.push(c);
    }
    let targets: Vec<&Target> = batch.iter().map(|e| &e.target).collect();
    let (loss, dout) = joint_loss(&outs, &targets, cfg)?;
    let mut grads = p.zeros_like();
    for (c, d) in caches.iter().zip(&dout) {
        backward(c, p, stats, cfg, d, &mut grads);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

pub struct Trainer<'a> {
    pub cfg: ModelConfig,
    pub params: Parameters,
    pub stats: &'a FeatureStats,
    pub step: u64,
    opt: AdamW,
    stable: Parameters,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: ModelConfig, params: Parameters, stats: &'a FeatureStats) -> Result<Self, ModelError> {
        cfg.validate()?;
        let opt = AdamW::new(&params, cfg.lr, cfg.weight_decay);
        Ok(Trainer { stable: params.clone(), cfg, params, stats, step: 0, opt })
    }

    /// One AdamW update on `batch` after global-norm clipping.
    pub fn train_step(&mut self, batch: &[&Example]) -> Result<StepReport, ModelError> {
        let mode = Mode::Train { seed: mix(self.cfg.seed, self.step, 0xd7) };
        let (loss, mut grads) = loss_and_gradients(&self.params, self.stats, &self.cfg, batch, mode)?;
        let grad_norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        if !loss.total.is_finite() || loss.total > DIVERGENCE_LOSS || !grad_norm.is_finite() {
            return Err(ModelError::Divergence {
                step: self.step,
                loss: loss.total,
                last_stable: Box::new(self.stable.clone()),
            });
        }
        self.stable.clone_from(&self.params);
        self.opt.step(&mut self.params, &grads);
        self.step += 1;
        Ok(StepReport {
            loss,
            grad_norm,
            clipped_norm: grads.sq_norm().sqrt(),
        })
    }
}

/// Eval-mode outputs for each example.
pub fn predict(
    p: &Parameters,
    stats: &FeatureStats,
    cfg: &ModelConfig,
    examples: &[Example],
) -> Result<Vec<ForwardOutput>, ModelError> {
    examples
        .iter()
        .map(|e| super::network::forward(&e.tokens, p, stats, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    /// Mean of per-batch losses over the epoch.
    pub train_loss: LossBreakdown,
    pub val_loss: Option<LossBreakdown>,
    pub val_metrics: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss, or the
    /// final ones without a validation set.
    pub params: Parameters,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn mean_loss(ls: &[LossBreakdown]) -> LossBreakdown {
    let n = ls.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for l in ls {
        m.score += l.score / n;
        m.aux += l.aux / n;
        m.feature += l.feature / n;
        m.score_mse += l.score_mse / n;
        m.aux_mse += l.aux_mse / n;
        m.feature_mse += l.feature_mse / n;
    }
    m.total = m.score + m.aux + m.feature;
    m
}

/// Shuffled mini-batch training for `cfg.epochs` epochs from
/// [`Parameters::init`].
pub fn train_loop(
    train: &[Example],
    val: &[Example],
    stats: &FeatureStats,
    cfg: &ModelConfig,
) -> Result<TrainOutcome, ModelError> {
    train_from(Parameters::init(cfg), train, val, stats, cfg)
}

pub fn train_from(
    init: Parameters,
    train: &[Example],
    val: &[Example],
    stats: &FeatureStats,
    cfg: &ModelConfig,
) -> Result<TrainOutcome, ModelError> {
    if train.is_empty() {
        return Err(ModelError::Shape("empty training set".into()));
    }
    let mut trainer = Trainer::new(cfg.clone(), init, stats)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Parameters)> = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0x5f));
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            losses.push(trainer.train_step(&batch)?.loss);
        }
        let train_loss = mean_loss(&losses);
        let (val_loss, val_metrics) = if val.is_empty() {
            (None, None)
        } else {
            let outs = predict(&trainer.params, stats, cfg, val)?;
            let targets: Vec<&Target> = val.iter().map(|e| &e.target).collect();
            let (l, _) = joint_loss(&outs, &targets, cfg)?;
            let y: Vec<f64> = val.iter().map(|e| e.target.s).collect();
            let yh: Vec<f64> = outs.iter().map(|o| o.s_hat).collect();
            (Some(l), EvalReport::compute(&y, &yh).ok())
        };
        log::info!(
            "epoch {} train_loss {:.5} val_loss {} val_pcc {} ({:.1}s)",
            epoch + 1,
            train_loss.total,
            val_loss.map_or("-".into(), |l| format!("{:.5}", l.total)),
            val_metrics.as_ref().and_then(|m| m.pcc).map_or("-".into(), |p| format!("{p:.4}")),
            started.elapsed().as_secs_f64()
        );
        let key = val_loss.map_or(train_loss.total, |l| l.total);
        if best.as_ref().map_or(true, |(b, _, _)| key < *b) {
            best = Some((key, epoch, trainer.params.clone()));
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            steps: trainer.step,
            train_loss,
            val_loss,
            val_metrics,
        });
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) if !val.is_empty() => (p, e + 1),
        _ => (trainer.params, cfg.epochs),
    };
    Ok(TrainOutcome { params, best_epoch, history })
}
