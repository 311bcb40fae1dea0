//! Within-chain percentile queues, absolute-threshold transfer analysis and
//! secondary re-ranking of a queue.
//!
//! Quantiles use linear interpolation between order statistics at zero-based
//! rank `(n - 1) · p / 100`. The same function backs the error percentiles
//! in [`crate::metrics`].

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::{opcode, CodeHash};
use crate::features::{Selector, StructuralFeatures};
use crate::records::{ScoreRecord, ScoredChain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriageError {
    #[error("empty input")]
    EmptyInput,
    #[error("percentile must lie strictly between 0 and 100, got {0}")]
    InvalidPercentile(f64),
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Quantile of an already ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64, TriageError> {
    if sorted.is_empty() {
        return Err(TriageError::EmptyInput);
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(TriageError::InvalidPercentile(p));
    }
    let rank = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || sorted[lo] == sorted[hi] {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Linear-interpolation quantile, `0 < p < 100`.
pub fn quantile(values: &[f64], p: f64) -> Result<f64, TriageError> {
    quantile_sorted(&sorted(values), p)
}

/// Within-distribution percentile of `s`: `100 · (#below + ½ · #equal) / n`.
pub fn percentile_rank_sorted(sorted: &[f64], s: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let below = sorted.partition_point(|x| *x < s);
    let not_above = sorted.partition_point(|x| *x <= s);
    let equal = not_above - below;
    100.0 * (below as f64 + 0.5 * equal as f64) / sorted.len() as f64
}

/// Largest count of values `>= quantile(p)` possible without ties at the cutoff.
fn nominal_tail_count(n: usize, p: f64) -> usize {
    let rank = (n - 1) as f64 * p / 100.0;
    n - rank.ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueueConfig {
    pub main_p: f64,
    pub emergency_p: f64,
    /// Lower edge of the watch band; the upper edge is `main_p`.
    pub watch_lo_p: f64,
    /// Reviewer throughput in contracts per day for transfer cost estimates.
    pub reviewer_rate: f64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            main_p: 99.0,
            emergency_p: 99.9,
            watch_lo_p: 95.0,
            reviewer_rate: 50.0,
        }
    }
}

/// Cutoffs for one chain's two-tier queue and watch band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSpec {
    pub chain: String,
    pub n: usize,
    pub main_p: f64,
    pub emergency_p: f64,
    pub watch_band: (f64, f64),
    pub main_cutoff: f64,
    pub emergency_cutoff: f64,
    pub watch_cutoff: f64,
    pub main_count: usize,
    pub emergency_count: usize,
    pub watch_count: usize,
    /// Ties at a cutoff pulled more contracts into a tier than its percentile allows.
    pub degenerate: bool,
}

impl QueueSpec {
    pub fn from_scores(chain: &str, scores: &[f64], cfg: &QueueConfig) -> Result<Self, TriageError> {
        let s = sorted(scores);
        let main_cutoff = quantile_sorted(&s, cfg.main_p)?;
        let emergency_cutoff = quantile_sorted(&s, cfg.emergency_p)?.max(main_cutoff);
        let watch_cutoff = quantile_sorted(&s, cfg.watch_lo_p)?.min(main_cutoff);
        let at_least = |c: f64| s.len() - s.partition_point(|x| *x < c);
        let main_count = at_least(main_cutoff);
        let emergency_count = at_least(emergency_cutoff);
        let watch_count = at_least(watch_cutoff) - main_count;
        let degenerate = main_count > nominal_tail_count(s.len(), cfg.main_p)
            || emergency_count > nominal_tail_count(s.len(), cfg.emergency_p);
        Ok(QueueSpec {
            chain: chain.to_string(),
            n: s.len(),
            main_p: cfg.main_p,
            emergency_p: cfg.emergency_p,
            watch_band: (cfg.watch_lo_p, cfg.main_p),
            main_cutoff,
            emergency_cutoff,
            watch_cutoff,
            main_count,
            emergency_count,
            watch_count,
            degenerate,
        })
    }

    pub fn tier_of(&self, score: f64) -> Option<Tier> {
        if score >= self.emergency_cutoff {
            Some(Tier::Emergency)
        } else if score >= self.main_cutoff {
            Some(Tier::Main)
        } else if score >= self.watch_cutoff {
            Some(Tier::Watch)
        } else {
            None
        }
    }
}

/// Ordered lowest to highest urgency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Watch,
    Main,
    Emergency,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Watch => "watch",
            Tier::Main => "main",
            Tier::Emergency => "emergency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryFlag {
    MissingFeature,
    DegenerateDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub record: ScoreRecord,
    pub percentile: f64,
    pub priority: Option<f64>,
    pub flags: Vec<EntryFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageQueue {
    pub chain: String,
    pub tier: Tier,
    pub cutoff: f64,
    /// Score descending, canonical hash ascending on ties.
    pub entries: Vec<QueueEntry>,
}

impl TriageQueue {
    pub fn hashes(&self) -> HashSet<CodeHash> {
        self.entries.iter().map(|e| e.record.canonical_hash).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainQueues {
    pub spec: QueueSpec,
    pub main: TriageQueue,
    pub emergency: TriageQueue,
    pub watch: TriageQueue,
}

fn by_score_then_hash(a: &ScoreRecord, b: &ScoreRecord) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.canonical_hash.cmp(&b.canonical_hash))
}

/// Main (`>= p99`), emergency (`>= p99.9`, a subset of main) and watch
/// (`p95 <= s < p99`) queues for one chain.
pub fn build_queues(chain: &ScoredChain, cfg: &QueueConfig) -> Result<ChainQueues, TriageError> {
    let scores = chain.scores();
    let spec = QueueSpec::from_scores(&chain.chain, &scores, cfg)?;
    let sorted_scores = sorted(&scores);
    let mut ranked: Vec<&ScoreRecord> = chain.records.iter().collect();
    ranked.sort_by(|a, b| by_score_then_hash(a, b));

    let flags = if spec.degenerate {
        vec![EntryFlag::DegenerateDistribution]
    } else {
        vec![]
    };
    let make = |tier: Tier, cutoff: f64, keep: &dyn Fn(f64) -> bool| TriageQueue {
        chain: chain.chain.clone(),
        tier,
        cutoff,
        entries: ranked
            .iter()
            .filter(|r| keep(r.score))
            .map(|r| QueueEntry {
                record: (*r).clone(),
                percentile: percentile_rank_sorted(&sorted_scores, r.score),
                priority: None,
                flags: flags.clone(),
            })
            .collect(),
    };
    let main = make(Tier::Main, spec.main_cutoff, &|s| s >= spec.main_cutoff);
    let emergency = make(Tier::Emergency, spec.emergency_cutoff, &|s| s >= spec.emergency_cutoff);
    let watch = make(Tier::Watch, spec.watch_cutoff, &|s| {
        s >= spec.watch_cutoff && s < spec.main_cutoff
    });
    Ok(ChainQueues {
        spec,
        main,
        emergency,
        watch,
    })
}

/// Published chain-level cutoffs `(chain, p99, p99.9)` from the reference
/// measurement. Documentation only; never used as a default.
pub const REFERENCE_CUTOFFS: [(&str, f64, f64); 4] = [
    ("ethereum", 18.07, 22.69),
    ("bsc", 16.82, 19.74),
    ("polygon", 18.72, 20.51),
    ("avalanche", 19.18, 20.67),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub target_chain: String,
    pub n: usize,
    pub tail_count: usize,
    /// Percent of the target corpus at or above the foreign cutoff.
    pub tail_share: f64,
    /// Count at or above the target's own main cutoff.
    pub own_count: usize,
    pub delta_n: i64,
    pub delta_days: f64,
}

/// What a foreign absolute cutoff selects on `target`, against the target's
/// own main-percentile queue.
pub fn transfer_tail_share(
    target_chain: &str,
    target_scores: &[f64],
    foreign_cutoff: f64,
    cfg: &QueueConfig,
) -> Result<TransferRow, TriageError> {
    let s = sorted(target_scores);
    let own_cutoff = quantile_sorted(&s, cfg.main_p)?;
    let at_least = |c: f64| s.len() - s.partition_point(|x| *x < c);
    let tail_count = at_least(foreign_cutoff);
    let own_count = at_least(own_cutoff);
    let delta_n = tail_count as i64 - own_count as i64;
    Ok(TransferRow {
        target_chain: target_chain.to_string(),
        n: s.len(),
        tail_count,
        tail_share: 100.0 * tail_count as f64 / s.len() as f64,
        own_count,
        delta_n,
        delta_days: delta_n as f64 / cfg.reviewer_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source_chain: String,
    pub cutoff: f64,
    pub reviewer_rate: f64,
    pub rows: Vec<TransferRow>,
}

/// Apply `source`'s main cutoff to every chain in `corpora` (itself included).
pub fn transfer_report(
    source: &str,
    corpora: &BTreeMap<String, ScoredChain>,
    cfg: &QueueConfig,
) -> Result<TransferReport, TriageError> {
    let src = corpora.get(source).ok_or(TriageError::EmptyInput)?;
    let cutoff = quantile(&src.scores(), cfg.main_p)?;
    let rows = corpora
        .values()
        .map(|c| transfer_tail_share(&c.chain, &c.scores(), cutoff, cfg))
        .collect::<Result<_, _>>()?;
    Ok(TransferReport {
        source_chain: source.to_string(),
        cutoff,
        reviewer_rate: cfg.reviewer_rate,
        rows,
    })
}

/// Weights and caps for [`secondary_rank`]. The defaults are heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecondaryWeights {
    pub low_density: f64,
    pub selector_lift: f64,
    pub external_calls: f64,
    pub reuse_cluster: f64,
    pub sparse_owner: f64,
    pub proxy: f64,
    /// Mean selector lift saturates here.
    pub lift_cap: f64,
    /// External-call enrichment ratio saturates here.
    pub external_call_cap: f64,
    /// "Sparse" means at most this many selectors.
    pub sparse_selector_max: usize,
}

impl Default for SecondaryWeights {
    fn default() -> Self {
        SecondaryWeights {
            low_density: 1.0,
            selector_lift: 1.0,
            external_calls: 1.0,
            reuse_cluster: 1.0,
            sparse_owner: 1.0,
            proxy: 1.0,
            lift_cap: 50.0,
            external_call_cap: 5.0,
            sparse_selector_max: 8,
        }
    }
}

/// Chain-level context for re-ranking a queue.
#[derive(Debug, Clone, Default)]
pub struct SecondaryContext<'a> {
    pub features: HashMap<CodeHash, &'a StructuralFeatures>,
    /// Ascending signature densities of the whole chain.
    pub densities: Vec<f64>,
    pub selector_lift: HashMap<Selector, f64>,
    /// Chain-wide share of external-call opcodes among all opcodes.
    pub external_call_baseline: f64,
    /// Hashes that belong to a cross-chain reuse cluster.
    pub reuse_hashes: HashSet<CodeHash>,
}

pub fn external_call_share(f: &StructuralFeatures) -> (u64, u64) {
    let ext = opcode::EXTERNAL_CALL_OPS
        .iter()
        .map(|op| f.opcode_hist.get(*op))
        .sum();
    (ext, f.opcode_hist.total())
}

impl<'a> SecondaryContext<'a> {
    pub fn new(
        features: impl IntoIterator<Item = (CodeHash, &'a StructuralFeatures)>,
        selector_lift: HashMap<Selector, f64>,
        reuse_hashes: HashSet<CodeHash>,
    ) -> Self {
        let features: HashMap<CodeHash, &StructuralFeatures> = features.into_iter().collect();
        let mut densities: Vec<f64> = features.values().map(|f| f.signature_density).collect();
        densities.sort_by(f64::total_cmp);
        let (ext, total) = features
            .values()
            .map(|f| external_call_share(f))
            .fold((0u64, 0u64), |(a, b), (x, y)| (a + x, b + y));
        SecondaryContext {
            features,
            densities,
            selector_lift,
            external_call_baseline: if total == 0 { 0.0 } else { ext as f64 / total as f64 },
            reuse_hashes,
        }
    }
}

/// Per-signal components of the secondary priority, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityComponents {
    pub low_density: f64,
    pub selector_lift: f64,
    pub external_calls: f64,
    pub reuse_cluster: f64,
    pub sparse_owner: f64,
    pub proxy: f64,
}

impl PriorityComponents {
    pub fn compute(
        hash: &CodeHash,
        f: &StructuralFeatures,
        ctx: &SecondaryContext<'_>,
        w: &SecondaryWeights,
    ) -> Self {
        let low_density = 1.0 - percentile_rank_sorted(&ctx.densities, f.signature_density) / 100.0;
        let lifts: Vec<f64> = f
            .selectors
            .iter()
            .filter_map(|s| ctx.selector_lift.get(s).copied())
            .collect();
        let selector_lift = if lifts.is_empty() || w.lift_cap <= 0.0 {
            0.0
        } else {
            let mean = lifts.iter().sum::<f64>() / lifts.len() as f64;
            mean.min(w.lift_cap) / w.lift_cap
        };
        let (ext, total) = external_call_share(f);
        let external_calls = if total == 0 || ctx.external_call_baseline <= 0.0 || w.external_call_cap <= 0.0 {
            0.0
        } else {
            let ratio = (ext as f64 / total as f64) / ctx.external_call_baseline;
            ratio.min(w.external_call_cap) / w.external_call_cap
        };
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        PriorityComponents {
            low_density,
            selector_lift,
            external_calls,
            reuse_cluster: flag(ctx.reuse_hashes.contains(hash)),
            sparse_owner: flag(f.has_owner_entry() && f.selector_count <= w.sparse_selector_max),
            proxy: flag(f.proxy),
        }
    }

    pub fn priority(&self, w: &SecondaryWeights) -> f64 {
        w.low_density * self.low_density
            + w.selector_lift * self.selector_lift
            + w.external_calls * self.external_calls
            + w.reuse_cluster * self.reuse_cluster
            + w.sparse_owner * self.sparse_owner
            + w.proxy * self.proxy
    }
}

/// Re-rank a queue by composite structural priority.
///
/// The sort is stable over the incoming score order, so equal priorities
/// keep score-descending, hash-ascending order. Entries without features
/// move to the end, flagged.
pub fn secondary_rank(
    queue: &TriageQueue,
    ctx: &SecondaryContext<'_>,
    w: &SecondaryWeights,
) -> TriageQueue {
    let mut scored = Vec::new();
    let mut missing = Vec::new();
    for e in &queue.entries {
        let mut e = e.clone();
        match ctx.features.get(&e.record.canonical_hash) {
            Some(f) => {
                let c = PriorityComponents::compute(&e.record.canonical_hash, f, ctx, w);
                e.priority = Some(c.priority(w));
                scored.push(e);
            }
            None => {
                e.priority = None;
                if !e.flags.contains(&EntryFlag::MissingFeature) {
                    e.flags.push(EntryFlag::MissingFeature);
                }
                missing.push(e);
            }
        }
    }
    scored.sort_by(|a, b| b.priority.unwrap().total_cmp(&a.priority.unwrap()));
    scored.extend(missing);
    TriageQueue {
        chain: queue.chain.clone(),
        tier: queue.tier,
        cutoff: queue.cutoff,
        entries: scored,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{OpcodeHistogram, SelectorSet};
    use crate::records::ScoreSource;

    fn chain(scores: &[f64]) -> ScoredChain {
        let records = scores
            .iter()
            .enumerate()
            .map(|(i, s)| ScoreRecord {
                chain: "t".into(),
                address: format!("0x{:040x}", i),
                canonical_hash: CodeHash::of(&(i as u64).to_le_bytes()),
                score: *s,
                source: ScoreSource::Model,
            })
            .collect();
        ScoredChain::new("t", records)
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(quantile(&v, 50.0).unwrap(), 50.0);
        assert_eq!(quantile(&v, 99.5).unwrap(), 99.5);
        assert_eq!(quantile(&[1.0, 2.0], 50.0).unwrap(), 1.5);
        for p in [0.1, 25.0, 99.9] {
            assert_eq!(quantile(&[3.25; 17], p).unwrap(), 3.25);
        }
        assert_eq!(quantile(&[], 50.0), Err(TriageError::EmptyInput));
        assert_eq!(quantile(&[1.0], 100.0), Err(TriageError::InvalidPercentile(100.0)));
        assert_eq!(quantile(&[1.0], 0.0), Err(TriageError::InvalidPercentile(0.0)));
    }

    #[test]
    fn percentile_rank_midpoint() {
        let s: Vec<f64> = (1..=4).map(|i| i as f64).collect();
        assert_eq!(percentile_rank_sorted(&s, 3.0), 62.5);
        assert_eq!(percentile_rank_sorted(&[1.0, 1.0], 1.0), 50.0);
        assert_eq!(percentile_rank_sorted(&s, 10.0), 100.0);
    }

    #[test]
    fn uniform_queue_sizes() {
        let scores: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let q = build_queues(&chain(&scores), &QueueConfig::default()).unwrap();
        assert_eq!(q.main.len(), 10);
        assert_eq!(q.emergency.len(), 1);
        assert!(q.emergency.hashes().is_subset(&q.main.hashes()));
        assert_eq!(q.watch.len(), 40);
        assert!(!q.spec.degenerate);
        assert!(q.main.entries.windows(2).all(|w| w[0].record.score >= w[1].record.score));
    }

    #[test]
    fn constant_scores_flagged() {
        let q = build_queues(&chain(&[4.0; 50]), &QueueConfig::default()).unwrap();
        assert_eq!(q.main.len(), 50);
        assert_eq!(q.spec.main_cutoff, 4.0);
        assert!(q.spec.degenerate);
        assert!(q.main.entries[0].flags.contains(&EntryFlag::DegenerateDistribution));
        // ties broken by hash ascending
        assert!(q
            .main
            .entries
            .windows(2)
            .all(|w| w[0].record.canonical_hash < w[1].record.canonical_hash));
        assert!(q.watch.is_empty());
    }

    #[test]
    fn transfer_rows() {
        let scores: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let cfg = QueueConfig::default();
        let all = transfer_tail_share("x", &scores, f64::NEG_INFINITY, &cfg).unwrap();
        assert_eq!(all.tail_share, 100.0);
        assert_eq!(all.delta_n, 990);
        assert_eq!(all.delta_days, 990.0 / 50.0);
        let own = quantile(&scores, 99.0).unwrap();
        let r = transfer_tail_share("x", &scores, own, &cfg).unwrap();
        assert_eq!(r.tail_share, 1.0);
        assert_eq!(r.delta_n, 0);
    }

    #[test]
    fn bimodal_exact_count() {
        // 9,700 low scores, 300 high ones; any cutoff in the gap keeps exactly 300.
        let mut scores: Vec<f64> = (0..9_700).map(|i| (i % 97) as f64 / 97.0).collect();
        scores.extend((0..300).map(|i| 10.0 + (i % 7) as f64));
        let r = transfer_tail_share("b", &scores, 5.0, &QueueConfig::default()).unwrap();
        assert_eq!(r.tail_count, 300);
        assert!((r.tail_share - 3.0).abs() < 1e-12);
    }

    fn feat(density: f64, selectors: &[Selector], proxy: bool) -> StructuralFeatures {
        let sel: SelectorSet = selectors.iter().copied().collect();
        StructuralFeatures {
            selector_count: sel.len(),
            selectors: sel,
            signature_density: density,
            byte_len: 1024,
            erc20: false,
            erc721: false,
            proxy,
            minimal_proxy: false,
            opcode_hist: OpcodeHistogram::default(),
        }
    }

    #[test]
    fn reuse_cluster_outranks_twin() {
        let q = build_queues(&chain(&(0..200).map(|i| i as f64).collect::<Vec<_>>()), &QueueConfig::default())
            .unwrap()
            .main;
        let f = feat(1.0, &[], false);
        let hashes: Vec<CodeHash> = q.entries.iter().map(|e| e.record.canonical_hash).collect();
        let last = *hashes.last().unwrap();
        let ctx = SecondaryContext::new(
            hashes.iter().map(|h| (*h, &f)),
            HashMap::new(),
            [last].into_iter().collect(),
        );
        let r = secondary_rank(&q, &ctx, &SecondaryWeights::default());
        assert_eq!(r.entries[0].record.canonical_hash, last);
        // everything else keeps its score order
        let rest: Vec<CodeHash> = r.entries[1..].iter().map(|e| e.record.canonical_hash).collect();
        assert_eq!(rest, hashes[..hashes.len() - 1].to_vec());
    }

    #[test]
    fn missing_features_demoted() {
        let q = build_queues(&chain(&(0..300).map(|i| i as f64).collect::<Vec<_>>()), &QueueConfig::default())
            .unwrap()
            .main;
        let f = feat(1.0, &[], false);
        let top = q.entries[0].record.canonical_hash;
        let ctx = SecondaryContext::new(
            q.entries.iter().skip(1).map(|e| (e.record.canonical_hash, &f)),
            HashMap::new(),
            HashSet::new(),
        );
        let r = secondary_rank(&q, &ctx, &SecondaryWeights::default());
        let last = r.entries.last().unwrap();
        assert_eq!(last.record.canonical_hash, top);
        assert!(last.flags.contains(&EntryFlag::MissingFeature));
        assert_eq!(last.priority, None);
    }
}
