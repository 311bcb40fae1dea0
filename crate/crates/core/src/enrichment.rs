//! Tail enrichment of selectors and opcodes, and label prevalence in the
//! tail versus the whole corpus.
//!
//! Selector frequency is the fraction of contracts that contain the
//! selector. Opcode frequency is the share of all opcode occurrences.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::opcode;
use crate::features::{Selector, StructuralFeatures};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnrichmentError {
    #[error("tail set is empty")]
    EmptyTail,
    #[error("reference set is empty")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Selector,
    Opcode,
}

impl PatternKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::Selector => "selector",
            PatternKind::Opcode => "opcode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    Selector(Selector),
    Opcode(u8),
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Selector(s) => write!(f, "{s}"),
            Pattern::Opcode(op) => f.write_str(opcode::name(*op)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftRow {
    pub pattern: Pattern,
    pub tail_freq: f64,
    pub all_freq: f64,
    pub lift: f64,
    pub tail_count: u64,
    pub all_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftTable {
    pub kind: PatternKind,
    pub epsilon: f64,
    pub min_count: u64,
    /// Lift descending, pattern ascending on ties.
    pub rows: Vec<LiftRow>,
}

impl LiftTable {
    pub fn selector_lifts(&self) -> std::collections::HashMap<Selector, f64> {
        self.rows
            .iter()
            .filter_map(|r| match r.pattern {
                Pattern::Selector(s) => Some((s, r.lift)),
                Pattern::Opcode(_) => None,
            })
            .collect()
    }

    pub fn get(&self, p: &Pattern) -> Option<&LiftRow> {
        self.rows.iter().find(|r| &r.pattern == p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    pub epsilon: f64,
    pub min_count: u64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            epsilon: 1e-9,
            min_count: 5,
        }
    }
}

fn counts(set: &[&StructuralFeatures], kind: PatternKind) -> (BTreeMap<Pattern, u64>, u64) {
    let mut m = BTreeMap::new();
    match kind {
        PatternKind::Selector => {
            for f in set {
                for s in &f.selectors {
                    *m.entry(Pattern::Selector(*s)).or_insert(0) += 1;
                }
            }
            (m, set.len() as u64)
        }
        PatternKind::Opcode => {
            let mut total = 0;
            for f in set {
                for (op, c) in f.opcode_hist.nonzero() {
                    *m.entry(Pattern::Opcode(op)).or_insert(0) += c;
                    total += c;
                }
            }
            (m, total)
        }
    }
}

/// `lift = p_tail / (p_all + ε)` for every pattern seen at least
/// `min_count` times in the tail.
pub fn lift_table(
    tail: &[&StructuralFeatures],
    all: &[&StructuralFeatures],
    kind: PatternKind,
    cfg: &LiftConfig,
) -> Result<LiftTable, EnrichmentError> {
    if tail.is_empty() {
        return Err(EnrichmentError::EmptyTail);
    }
    if all.is_empty() {
        return Err(EnrichmentError::EmptyInput);
    }
    let (tail_counts, tail_total) = counts(tail, kind);
    let (all_counts, all_total) = counts(all, kind);
    let freq = |c: u64, t: u64| if t == 0 { 0.0 } else { c as f64 / t as f64 };

    let mut rows: Vec<LiftRow> = all_counts
        .iter()
        .map(|(p, &ac)| (p, tail_counts.get(p).copied().unwrap_or(0), ac))
        .chain(
            tail_counts
                .iter()
                .filter(|(p, _)| !all_counts.contains_key(p))
                .map(|(p, &tc)| (p, tc, 0)),
        )
        .filter(|(_, tc, _)| *tc >= cfg.min_count)
        .map(|(p, tc, ac)| {
            let tail_freq = freq(tc, tail_total);
            let all_freq = freq(ac, all_total);
            LiftRow {
                pattern: *p,
                tail_freq,
                all_freq,
                lift: tail_freq / (all_freq + cfg.epsilon),
                tail_count: tc,
                all_count: ac,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.lift.total_cmp(&a.lift).then_with(|| a.pattern.cmp(&b.pattern)));
    Ok(LiftTable {
        kind,
        epsilon: cfg.epsilon,
        min_count: cfg.min_count,
        rows,
    })
}

/// The label flags needed for prevalence reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub erc20: bool,
    pub erc721: bool,
    pub proxy: bool,
    pub minimal_proxy: bool,
}

impl From<&StructuralFeatures> for Labels {
    fn from(f: &StructuralFeatures) -> Self {
        Labels {
            erc20: f.erc20,
            erc721: f.erc721,
            proxy: f.proxy,
            minimal_proxy: f.minimal_proxy,
        }
    }
}

/// Percentages of a set carrying each label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPercentages {
    pub n: usize,
    pub erc20: f64,
    pub erc721: f64,
    pub proxy: f64,
    pub minimal_proxy: f64,
}

impl LabelPercentages {
    fn of(set: &[Labels]) -> Self {
        let n = set.len();
        let pct = |pred: fn(&Labels) -> bool| {
            if n == 0 {
                0.0
            } else {
                100.0 * set.iter().filter(|l| pred(l)).count() as f64 / n as f64
            }
        };
        LabelPercentages {
            n,
            erc20: pct(|l| l.erc20),
            erc721: pct(|l| l.erc721),
            proxy: pct(|l| l.proxy),
            minimal_proxy: pct(|l| l.minimal_proxy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShares {
    pub overall: LabelPercentages,
    pub tail: LabelPercentages,
}

pub fn tail_label_shares(tail: &[Labels], all: &[Labels]) -> LabelShares {
    LabelShares {
        overall: LabelPercentages::of(all),
        tail: LabelPercentages::of(tail),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{OpcodeHistogram, SelectorSet};

    fn feat(selectors: &[u32], ops: &[(u8, u64)]) -> StructuralFeatures {
        let sel: SelectorSet = selectors.iter().map(|s| Selector(s.to_be_bytes())).collect();
        let mut h = OpcodeHistogram::default();
        for (op, c) in ops {
            h.0[*op as usize] = *c;
        }
        StructuralFeatures {
            selector_count: sel.len(),
            selectors: sel,
            signature_density: 0.0,
            byte_len: 100,
            erc20: false,
            erc721: false,
            proxy: false,
            minimal_proxy: false,
            opcode_hist: h,
        }
    }

    #[test]
    fn tail_equals_all() {
        let fs: Vec<StructuralFeatures> =
            (0..10).map(|i| feat(&[i % 3, 7], &[(0x01, i as u64 + 1), (0xf1, 2)])).collect();
        let refs: Vec<&StructuralFeatures> = fs.iter().collect();
        let cfg = LiftConfig { epsilon: 1e-9, min_count: 0 };
        for kind in [PatternKind::Selector, PatternKind::Opcode] {
            let t = lift_table(&refs, &refs, kind, &cfg).unwrap();
            for r in &t.rows {
                assert!((r.lift - 1.0).abs() < 1e-7, "{r:?}");
            }
        }
    }

    #[test]
    fn fifty_fold_lift() {
        // selector 0xdead in all 10 tail contracts; 10 of 500 overall = 2%.
        let mut all: Vec<StructuralFeatures> = (0..490).map(|_| feat(&[1], &[])).collect();
        let tail: Vec<StructuralFeatures> = (0..10).map(|_| feat(&[0xdead, 1], &[])).collect();
        all.extend(tail.iter().cloned());
        let a: Vec<&StructuralFeatures> = all.iter().collect();
        let t: Vec<&StructuralFeatures> = tail.iter().collect();
        let table = lift_table(&t, &a, PatternKind::Selector, &LiftConfig::default()).unwrap();
        let top = &table.rows[0];
        assert_eq!(top.pattern, Pattern::Selector(Selector(0xdeadu32.to_be_bytes())));
        assert!((top.lift - 50.0).abs() < 0.1);
        assert_eq!((top.tail_count, top.all_count), (10, 10));
    }

    #[test]
    fn hand_computed_fixture() {
        // all: A{s1,s2} ops ADD×3 CALL×1; B{s1} ADD×1; C{s3} CALL×4 ; tail = {A, C}
        let a = feat(&[1, 2], &[(0x01, 3), (0xf1, 1)]);
        let b = feat(&[1], &[(0x01, 1)]);
        let c = feat(&[3], &[(0xf1, 4)]);
        let all = [&a, &b, &c];
        let tail = [&a, &c];
        let cfg = LiftConfig { epsilon: 0.0, min_count: 1 };
        let sel = lift_table(&tail, &all, PatternKind::Selector, &cfg).unwrap();
        let get = |s: u32| sel.get(&Pattern::Selector(Selector(s.to_be_bytes()))).unwrap().clone();
        // s1: tail 1/2, all 2/3 → 0.75 ; s2: 1/2 vs 1/3 → 1.5 ; s3 same as s2
        assert_eq!(get(1).lift, 0.75);
        assert_eq!(get(2).lift, 1.5);
        assert_eq!(get(3).lift, 1.5);
        assert_eq!(sel.rows.len(), 3);
        assert_eq!(sel.rows[2].pattern, Pattern::Selector(Selector(1u32.to_be_bytes())));

        let ops = lift_table(&tail, &all, PatternKind::Opcode, &cfg).unwrap();
        // tail: ADD 3/8, CALL 5/8 ; all: ADD 4/9, CALL 5/9
        let add = ops.get(&Pattern::Opcode(0x01)).unwrap();
        let call = ops.get(&Pattern::Opcode(0xf1)).unwrap();
        assert!((add.lift - (3.0 / 8.0) / (4.0 / 9.0)).abs() < 1e-15);
        assert!((call.lift - (5.0 / 8.0) / (5.0 / 9.0)).abs() < 1e-15);
        assert_eq!(add.tail_count, 3);
        assert_eq!(ops.rows[0].pattern, Pattern::Opcode(0xf1));
    }

    #[test]
    fn min_count_filters() {
        let a = feat(&[1], &[]);
        let b = feat(&[2], &[]);
        let t = lift_table(&[&a], &[&a, &b], PatternKind::Selector, &LiftConfig::default()).unwrap();
        assert!(t.rows.is_empty());
    }

    #[test]
    fn empty_tail() {
        let a = feat(&[1], &[]);
        assert_eq!(
            lift_table(&[], &[&a], PatternKind::Selector, &LiftConfig::default()),
            Err(EnrichmentError::EmptyTail)
        );
    }

    #[test]
    fn label_shares() {
        let all = vec![Labels { erc20: true, ..Default::default() }; 4];
        let tail = vec![Labels::default(); 2];
        let s = tail_label_shares(&tail, &all);
        assert_eq!(s.overall.erc20, 100.0);
        assert_eq!(s.tail.erc20, 0.0);
        assert_eq!(s.tail.erc721, 0.0);
    }

    #[test]
    fn proxy_enrichment_pattern() {
        // 1,000,000 contracts with 2,500 proxies (0.25%); the tail holds
        // 10,000 contracts with 103 of them (1.03%).
        let mut all = vec![Labels::default(); 1_000_000];
        for l in all.iter_mut().take(2_500) {
            l.proxy = true;
        }
        let tail: Vec<Labels> = all[..103].iter().chain(&all[500_000..509_897]).copied().collect();
        assert_eq!(tail.len(), 10_000);
        let s = tail_label_shares(&tail, &all);
        assert!((s.overall.proxy - 0.25).abs() < 1e-12);
        assert!((s.tail.proxy - 1.03).abs() < 1e-12);
    }
}
