//! Cross-chain bytecode reuse: set overlap between chains' canonical hash
//! sets, tail-restricted overlap, and reuse clusters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::CodeHash;
use crate::records::{normalize_address, ScoredChain};
use crate::triage::{quantile, TriageError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReuseError {
    #[error("directional overlap from an empty set")]
    EmptySet,
    #[error(transparent)]
    Triage(#[from] TriageError),
}

/// Deduplicated canonical hashes of one chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainHashSet {
    pub chain: String,
    pub hashes: BTreeSet<CodeHash>,
}

impl ChainHashSet {
    pub fn new(chain: impl Into<String>, hashes: impl IntoIterator<Item = CodeHash>) -> Self {
        ChainHashSet {
            chain: chain.into(),
            hashes: hashes.into_iter().collect(),
        }
    }

    pub fn from_scored(c: &ScoredChain) -> Self {
        Self::new(c.chain.clone(), c.records.iter().map(|r| r.canonical_hash))
    }

    pub fn size(&self) -> usize {
        self.hashes.len()
    }
}

/// Result of a symmetric set similarity; `both_empty` marks the `0/0` case,
/// which is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub value: f64,
    pub both_empty: bool,
}

fn intersection<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter(|x| large.contains(x)).count()
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Similarity {
    let inter = intersection(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Similarity { value: 0.0, both_empty: true };
    }
    Similarity {
        value: inter as f64 / union as f64,
        both_empty: false,
    }
}

/// `|A ∩ B| / min(|A|, |B|)`.
pub fn overlap_coeff<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Similarity {
    let denom = a.len().min(b.len());
    if denom == 0 {
        return Similarity {
            value: 0.0,
            both_empty: a.is_empty() && b.is_empty(),
        };
    }
    Similarity {
        value: intersection(a, b) as f64 / denom as f64,
        both_empty: false,
    }
}

/// `|A ∩ B| / |A|`, the share of A's hashes also present on B.
pub fn directional_overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64, ReuseError> {
    if a.is_empty() {
        return Err(ReuseError::EmptySet);
    }
    Ok(intersection(a, b) as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: String,
    pub b: String,
    pub jaccard: f64,
    pub overlap_coeff: f64,
    pub a_to_b: Option<f64>,
    pub b_to_a: Option<f64>,
    pub tail_jaccard: f64,
}

/// Hashes at or above each chain's own `tail_p` quantile.
pub fn tail_sets(
    corpora: &BTreeMap<String, ScoredChain>,
    tail_p: f64,
) -> Result<BTreeMap<String, ChainHashSet>, ReuseError> {
    corpora
        .iter()
        .map(|(name, c)| {
            let cutoff = quantile(&c.scores(), tail_p)?;
            let tail = c
                .records
                .iter()
                .filter(|r| r.score >= cutoff)
                .map(|r| r.canonical_hash);
            Ok((name.clone(), ChainHashSet::new(name.clone(), tail)))
        })
        .collect()
}

/// Pairwise Jaccard of within-chain tail sets, keyed by `(a, b)` with `a < b`.
pub fn tail_jaccard(
    corpora: &BTreeMap<String, ScoredChain>,
    tail_p: f64,
) -> Result<BTreeMap<(String, String), f64>, ReuseError> {
    let tails = tail_sets(corpora, tail_p)?;
    let names: Vec<&String> = tails.keys().collect();
    let mut out = BTreeMap::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let j = jaccard(&tails[*a].hashes, &tails[*b].hashes).value;
            out.insert(((*a).clone(), (*b).clone()), j);
        }
    }
    Ok(out)
}

/// Overall and tail overlap for every chain pair.
pub fn overlap_matrix(
    corpora: &BTreeMap<String, ScoredChain>,
    tail_p: f64,
) -> Result<Vec<PairOverlap>, ReuseError> {
    let sets: BTreeMap<&String, ChainHashSet> =
        corpora.iter().map(|(n, c)| (n, ChainHashSet::from_scored(c))).collect();
    let tails = tail_jaccard(corpora, tail_p)?;
    let mut out = Vec::new();
    for ((a, b), tj) in tails {
        let (sa, sb) = (&sets[&a].hashes, &sets[&b].hashes);
        out.push(PairOverlap {
            jaccard: jaccard(sa, sb).value,
            overlap_coeff: overlap_coeff(sa, sb).value,
            a_to_b: directional_overlap(sa, sb).ok(),
            b_to_a: directional_overlap(sb, sa).ok(),
            tail_jaccard: tj,
            a,
            b,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterMember {
    pub chain: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseCluster {
    pub hash: CodeHash,
    pub members: Vec<ClusterMember>,
    pub chain_coverage: usize,
    pub mean_score: f64,
    pub max_score: f64,
    /// Some address is deployed with this code on more than one chain.
    pub identical_address: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ReuseCluster>,
    /// chain coverage → number of clusters.
    pub coverage_histogram: BTreeMap<usize, usize>,
    /// Hashes of clusters flagged `identical_address`.
    pub identical_address: Vec<CodeHash>,
}

/// Group scored contracts by canonical hash and keep those seen on two or
/// more chains. Members include every aliased deployment address.
pub fn reuse_clusters(corpora: &BTreeMap<String, ScoredChain>) -> ClusterReport {
    struct Acc {
        members: BTreeSet<ClusterMember>,
        chains: BTreeSet<String>,
        scores: Vec<f64>,
    }
    let mut groups: BTreeMap<CodeHash, Acc> = BTreeMap::new();
    for c in corpora.values() {
        let mut addrs: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
        for (a, i) in &c.address_index {
            addrs.entry(*i).or_default().push(a);
        }
        for (i, r) in c.records.iter().enumerate() {
            let acc = groups.entry(r.canonical_hash).or_insert_with(|| Acc {
                members: BTreeSet::new(),
                chains: BTreeSet::new(),
                scores: Vec::new(),
            });
            acc.chains.insert(c.chain.clone());
            acc.scores.push(r.score);
            acc.members.insert(ClusterMember {
                chain: c.chain.clone(),
                address: normalize_address(&r.address),
            });
            for a in addrs.get(&i).into_iter().flatten() {
                acc.members.insert(ClusterMember {
                    chain: c.chain.clone(),
                    address: (*a).clone(),
                });
            }
        }
    }

    let mut clusters = Vec::new();
    let mut coverage_histogram = BTreeMap::new();
    for (hash, acc) in groups {
        if acc.chains.len() < 2 {
            continue;
        }
        let mut chains_per_addr: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for m in &acc.members {
            chains_per_addr.entry(&m.address).or_default().insert(&m.chain);
        }
        let identical_address = chains_per_addr.values().any(|c| c.len() > 1);
        *coverage_histogram.entry(acc.chains.len()).or_insert(0) += 1;
        clusters.push(ReuseCluster {
            hash,
            chain_coverage: acc.chains.len(),
            mean_score: acc.scores.iter().sum::<f64>() / acc.scores.len() as f64,
            max_score: acc.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            identical_address,
            members: acc.members.into_iter().collect(),
        });
    }
    let identical_address = clusters
        .iter()
        .filter(|c| c.identical_address)
        .map(|c| c.hash)
        .collect();
    ClusterReport {
        clusters,
        coverage_histogram,
        identical_address,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{ScoreRecord, ScoreSource};

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn set_metric_examples() {
        let a = set(&["a", "b"]);
        let b = set(&["b", "c", "d"]);
        assert_eq!(jaccard(&a, &b).value, 0.25);
        assert_eq!(overlap_coeff(&a, &b).value, 0.5);
        assert_eq!(directional_overlap(&a, &b).unwrap(), 0.5);
        assert_eq!(directional_overlap(&b, &a).unwrap(), 1.0 / 3.0);
        assert_eq!(jaccard(&a, &a).value, 1.0);
        assert_eq!(overlap_coeff(&a, &a).value, 1.0);
        let d = set(&["x"]);
        assert_eq!(jaccard(&a, &d).value, 0.0);
        assert_eq!(overlap_coeff(&a, &d).value, 0.0);
        assert_eq!(directional_overlap(&a, &set(&["a", "b", "z"])).unwrap(), 1.0);
    }

    #[test]
    fn empty_sets() {
        let e = BTreeSet::<String>::new();
        assert_eq!(jaccard(&e, &e), Similarity { value: 0.0, both_empty: true });
        assert!(overlap_coeff(&e, &e).both_empty);
        assert_eq!(directional_overlap(&e, &set(&["a"])), Err(ReuseError::EmptySet));
    }

    fn rec(chain: &str, addr: &str, code: &[u8], score: f64) -> ScoreRecord {
        ScoreRecord {
            chain: chain.into(),
            address: addr.into(),
            canonical_hash: CodeHash::of(code),
            score,
            source: ScoreSource::Model,
        }
    }

    fn corpora(rows: Vec<ScoreRecord>) -> BTreeMap<String, ScoredChain> {
        let mut by: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
        for r in rows {
            by.entry(r.chain.clone()).or_default().push(r);
        }
        by.into_iter().map(|(k, v)| (k.clone(), ScoredChain::new(k, v))).collect()
    }

    #[test]
    fn three_chain_cluster() {
        let c = corpora(vec![
            rec("a", "0x01", b"t", 10.0),
            rec("b", "0x02", b"t", 12.0),
            rec("c", "0x03", b"t", 14.0),
            rec("a", "0x04", b"u", 1.0),
        ]);
        let r = reuse_clusters(&c);
        assert_eq!(r.clusters.len(), 1);
        let cl = &r.clusters[0];
        assert_eq!(cl.mean_score, 12.0);
        assert_eq!(cl.max_score, 14.0);
        assert_eq!(cl.chain_coverage, 3);
        assert!(!cl.identical_address);
        assert_eq!(r.coverage_histogram, BTreeMap::from([(3, 1)]));
    }

    #[test]
    fn no_shared_hashes() {
        let c = corpora(vec![rec("a", "0x01", b"t", 1.0), rec("b", "0x02", b"u", 1.0)]);
        assert!(reuse_clusters(&c).clusters.is_empty());
    }

    #[test]
    fn hand_grouped_fixture() {
        let c = corpora(vec![
            rec("eth", "0xAA", b"p", 3.0),
            rec("bsc", "0xaa", b"p", 5.0),
            rec("eth", "0x01", b"q", 7.0),
            rec("bsc", "0x02", b"q", 9.0),
            rec("poly", "0x03", b"q", 2.0),
            rec("poly", "0x04", b"r", 1.0),
            rec("eth", "0x05", b"s", 8.0),
        ]);
        let r = reuse_clusters(&c);
        let got: Vec<(CodeHash, usize, f64, bool)> = r
            .clusters
            .iter()
            .map(|c| (c.hash, c.chain_coverage, c.mean_score, c.identical_address))
            .collect();
        let mut want = vec![
            (CodeHash::of(b"p"), 2, 4.0, true),
            (CodeHash::of(b"q"), 3, 6.0, false),
        ];
        want.sort_by_key(|w| w.0);
        assert_eq!(got, want);
        assert_eq!(r.identical_address, vec![CodeHash::of(b"p")]);
    }

    #[test]
    fn identical_tails() {
        let rows: Vec<ScoreRecord> = ["x", "y"]
            .iter()
            .flat_map(|ch| {
                (0..500u32).map(move |i| rec(ch, &format!("0x{i}"), &i.to_le_bytes(), i as f64))
            })
            .collect();
        let t = tail_jaccard(&corpora(rows), 99.0).unwrap();
        assert_eq!(t[&("x".to_string(), "y".to_string())], 1.0);
    }

    #[test]
    fn hash_set_fixed_point() {
        let s = ChainHashSet::new("a", [CodeHash::of(b"1"), CodeHash::of(b"2"), CodeHash::of(b"1")]);
        assert_eq!(s.size(), 2);
        assert_eq!(ChainHashSet::new("a", s.hashes.iter().copied()), s);
    }
}
