//! Localize known incident addresses inside scored corpora.
//!
//! Incident file format, one record per line:
//!
//! ```text
//! # name,chain,evidence,address[,address...][,note=free text]
//! Transit Swap,bsc,tx_resolved,0x8785bb8deae13783b24d7afe250d42ea7d7e17a5
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. `evidence` is
//! `direct` or `tx_resolved`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{is_valid_address, normalize_address, ScoredChain};
use crate::triage::{percentile_rank_sorted, QueueConfig, QueueSpec, TriageError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IncidentError {
    #[error("incident '{incident}' references chain '{chain}' which has no scored corpus")]
    UnknownChain { incident: String, chain: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Triage(#[from] TriageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    Direct,
    TxResolved,
}

impl Evidence {
    pub fn as_str(&self) -> &'static str {
        match self {
            Evidence::Direct => "direct",
            Evidence::TxResolved => "tx_resolved",
        }
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Evidence {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(Evidence::Direct),
            "tx_resolved" | "tx-resolved" => Ok(Evidence::TxResolved),
            other => Err(format!("unknown evidence type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub name: String,
    pub chain: String,
    pub evidence: Evidence,
    /// Lowercased, deduplicated, in first-seen order.
    pub addresses: Vec<String>,
    pub source_note: Option<String>,
}

pub fn parse_incidents(text: &str) -> Result<Vec<IncidentRecord>, IncidentError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| IncidentError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(err("expected name,chain,evidence,address...".into()));
        }
        let name = fields[0];
        let chain = fields[1];
        if name.is_empty() || chain.is_empty() {
            return Err(err("empty name or chain".into()));
        }
        let evidence: Evidence = fields[2].parse().map_err(err)?;
        let mut addresses: Vec<String> = Vec::new();
        let mut note = None;
        let rest = &fields[3..];
        for (j, f) in rest.iter().enumerate() {
            if let Some(n) = f.strip_prefix("note=") {
                if j + 1 != rest.len() {
                    return Err(err("note= must be the last field".into()));
                }
                note = Some(n.to_string());
            } else if is_valid_address(f) {
                let a = normalize_address(f);
                if !addresses.contains(&a) {
                    addresses.push(a);
                }
            } else {
                return Err(err(format!("malformed address '{f}'")));
            }
        }
        if addresses.is_empty() {
            return Err(err("no addresses".into()));
        }
        out.push(IncidentRecord {
            name: name.to_string(),
            chain: chain.to_ascii_lowercase(),
            evidence,
            addresses,
            source_note: note,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub incident: String,
    pub chain: String,
    pub evidence: Evidence,
    pub address: String,
    pub score: f64,
    pub percentile: f64,
    pub in_p99: bool,
    pub in_p999: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unmatched {
    pub incident: String,
    pub chain: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub results: Vec<AlignmentResult>,
    pub unmatched: Vec<Unmatched>,
}

/// Match every incident address against its chain's scores. Flags use the
/// same cutoffs as the triage queues.
pub fn align(
    incidents: &[IncidentRecord],
    corpora: &BTreeMap<String, ScoredChain>,
    cfg: &QueueConfig,
) -> Result<Alignment, IncidentError> {
    let mut prepared: BTreeMap<&str, (Vec<f64>, QueueSpec)> = BTreeMap::new();
    let mut out = Alignment::default();
    for inc in incidents {
        let chain = corpora.get(&inc.chain).ok_or_else(|| IncidentError::UnknownChain {
            incident: inc.name.clone(),
            chain: inc.chain.clone(),
        })?;
        if !prepared.contains_key(inc.chain.as_str()) {
            let mut s = chain.scores();
            s.sort_by(f64::total_cmp);
            let spec = QueueSpec::from_scores(&inc.chain, &s, cfg)?;
            prepared.insert(inc.chain.as_str(), (s, spec));
        }
        let (sorted, spec) = &prepared[inc.chain.as_str()];
        for addr in &inc.addresses {
            match chain.lookup(addr) {
                Some(rec) => {
                    let in_p99 = rec.score >= spec.main_cutoff;
                    let in_p999 = rec.score >= spec.emergency_cutoff;
                    debug_assert!(!in_p999 || in_p99);
                    out.results.push(AlignmentResult {
                        incident: inc.name.clone(),
                        chain: inc.chain.clone(),
                        evidence: inc.evidence,
                        address: normalize_address(addr),
                        score: rec.score,
                        percentile: percentile_rank_sorted(sorted, rec.score),
                        in_p99,
                        in_p999,
                    });
                }
                None => out.unmatched.push(Unmatched {
                    incident: inc.name.clone(),
                    chain: inc.chain.clone(),
                    address: normalize_address(addr),
                }),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub incident: String,
    pub chain: String,
    pub evidence: Evidence,
    pub address: String,
    pub score: f64,
    pub percentile: f64,
    pub in_p99: bool,
    pub in_p999: bool,
    pub matched_addresses: usize,
}

pub const ALIGNMENT_HEADER: [&str; 9] = [
    "incident",
    "chain",
    "evidence",
    "address",
    "score",
    "percentile",
    "in_p99",
    "in_p999",
    "matched_addresses",
];

/// One row per (incident, chain, evidence), reporting the matched address
/// with the highest percentile. Rows keep first-appearance order.
pub fn alignment_report(results: &[AlignmentResult]) -> Vec<AlignmentRow> {
    let mut order: Vec<(String, String, Evidence)> = Vec::new();
    let mut best: BTreeMap<(String, String, Evidence), (AlignmentRow, BTreeSet<String>)> =
        BTreeMap::new();
    for r in results {
        let key = (r.incident.clone(), r.chain.clone(), r.evidence);
        let row = AlignmentRow {
            incident: r.incident.clone(),
            chain: r.chain.clone(),
            evidence: r.evidence,
            address: r.address.clone(),
            score: r.score,
            percentile: r.percentile,
            in_p99: r.in_p99,
            in_p999: r.in_p999,
            matched_addresses: 0,
        };
        match best.get_mut(&key) {
            Some((cur, seen)) => {
                seen.insert(r.address.clone());
                if r.percentile > cur.percentile {
                    *cur = row;
                }
            }
            None => {
                order.push(key.clone());
                best.insert(key, (row, BTreeSet::from([r.address.clone()])));
            }
        }
    }
    order
        .into_iter()
        .map(|k| {
            let (mut row, seen) = best.remove(&k).expect("key recorded");
            row.matched_addresses = seen.len();
            row
        })
        .collect()
}

/// Render report rows as CSV with a fixed header. Scores carry six decimals,
/// percentiles two.
pub fn alignment_csv(rows: &[AlignmentRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ALIGNMENT_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.incident.clone(),
            r.chain.clone(),
            r.evidence.to_string(),
            r.address.clone(),
            format!("{:.6}", r.score),
            format!("{:.2}", r.percentile),
            r.in_p99.to_string(),
            r.in_p999.to_string(),
            r.matched_addresses.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::CodeHash;
    use crate::records::{ScoreRecord, ScoreSource};

    fn addr(i: usize) -> String {
        format!("0x{i:040x}")
    }

    fn chain(name: &str, scores: &[f64]) -> ScoredChain {
        let recs = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreRecord {
                chain: name.into(),
                address: addr(i),
                canonical_hash: CodeHash::of(&(i as u64).to_le_bytes()),
                score: s,
                source: ScoreSource::Model,
            })
            .collect();
        ScoredChain::new(name, recs)
    }

    fn corpora(c: ScoredChain) -> BTreeMap<String, ScoredChain> {
        BTreeMap::from([(c.chain.clone(), c)])
    }

    fn inc(name: &str, chain: &str, ev: Evidence, addrs: &[String]) -> IncidentRecord {
        IncidentRecord {
            name: name.into(),
            chain: chain.into(),
            evidence: ev,
            addresses: addrs.to_vec(),
            source_note: None,
        }
    }

    #[test]
    fn parse_file() {
        let text = "# comment\n\nFoo,BSC,direct,0xAA00000000000000000000000000000000000001,0xaa00000000000000000000000000000000000001,note=report\nBar,eth,tx_resolved,0x00000000000000000000000000000000000000bb\n";
        let v = parse_incidents(text).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].chain, "bsc");
        assert_eq!(v[0].addresses.len(), 1);
        assert_eq!(v[0].source_note.as_deref(), Some("report"));
        assert_eq!(v[1].evidence, Evidence::TxResolved);
        assert!(matches!(
            parse_incidents("Foo,bsc,direct,0x12"),
            Err(IncidentError::Parse { line: 1, .. })
        ));
        assert!(parse_incidents("Foo,bsc,rumour,0x00000000000000000000000000000000000000bb").is_err());
        assert!(parse_incidents("Foo,bsc,direct").is_err());
    }

    #[test]
    fn planted_rank() {
        let scores: Vec<f64> = (0..10_000).map(|i| i as f64 / 100.0).collect();
        let c = corpora(chain("bsc", &scores));
        // 1-based ascending rank 9,974 is index 9,973.
        let a = align(&[inc("Transit", "bsc", Evidence::TxResolved, &[addr(9973)])], &c, &QueueConfig::default()).unwrap();
        let r = &a.results[0];
        assert!((r.percentile - 99.74).abs() <= 0.01, "{}", r.percentile);
        assert!(r.in_p99);
        assert!(!r.in_p999);
    }

    #[test]
    fn max_and_unmatched() {
        let scores: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let c = corpora(chain("eth", &scores));
        let a = align(
            &[inc("X", "eth", Evidence::Direct, &[addr(999), addr(5000)])],
            &c,
            &QueueConfig::default(),
        )
        .unwrap();
        assert_eq!(a.results.len(), 1);
        assert!(a.results[0].percentile > 99.9);
        assert!(a.results[0].in_p99 && a.results[0].in_p999);
        assert_eq!(a.unmatched[0].address, addr(5000));
    }

    #[test]
    fn unknown_chain() {
        let c = corpora(chain("eth", &[1.0, 2.0]));
        let e = align(&[inc("X", "polygon", Evidence::Direct, &[addr(0)])], &c, &QueueConfig::default());
        assert!(matches!(e, Err(IncidentError::UnknownChain { .. })));
    }

    #[test]
    fn flags_match_cutoffs() {
        let scores: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let c = corpora(chain("eth", &scores));
        let all: Vec<String> = (0..500).map(addr).collect();
        let a = align(&[inc("X", "eth", Evidence::Direct, &all)], &c, &QueueConfig::default()).unwrap();
        let spec = QueueSpec::from_scores("eth", &scores, &QueueConfig::default()).unwrap();
        for r in &a.results {
            assert_eq!(r.in_p99, r.score >= spec.main_cutoff);
            assert!(!r.in_p999 || r.in_p99);
        }
    }

    #[test]
    fn report_rows() {
        assert_eq!(alignment_csv(&alignment_report(&[])), ALIGNMENT_HEADER.join(",") + "\n");
        let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let c = corpora(chain("bsc", &scores));
        let incs = [
            inc("Spill", "bsc", Evidence::Direct, &[addr(10), addr(99)]),
            inc("Spill", "bsc", Evidence::TxResolved, &[addr(50)]),
        ];
        let a = align(&incs, &c, &QueueConfig::default()).unwrap();
        let rows = alignment_report(&a.results);
        assert_eq!(rows.len(), 2);
        // p99 of 0..99 is 98.01, p99.9 is 98.901.
        let expected = "\
incident,chain,evidence,address,score,percentile,in_p99,in_p999,matched_addresses
Spill,bsc,direct,0x0000000000000000000000000000000000000063,99.000000,99.50,true,true,2
Spill,bsc,tx_resolved,0x0000000000000000000000000000000000000032,50.000000,50.50,false,false,1
";
        assert_eq!(alignment_csv(&rows), expected);
    }
}
