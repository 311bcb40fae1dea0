//! Score rows shared by every analytics stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bytecode::CodeHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Tool,
    Model,
}

/// `(chain, address, canonical hash, score, source)`; the join key of all
/// downstream tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub chain: String,
    pub address: String,
    pub canonical_hash: CodeHash,
    pub score: f64,
    pub source: ScoreSource,
}

/// Lowercase an address, keeping a `0x` prefix.
pub fn normalize_address(addr: &str) -> String {
    let a = addr.trim().to_ascii_lowercase();
    if a.starts_with("0x") {
        a
    } else {
        format!("0x{a}")
    }
}

/// `0x` followed by 40 hex digits.
pub fn is_valid_address(addr: &str) -> bool {
    let a = addr.trim();
    let body = a.strip_prefix("0x").or_else(|| a.strip_prefix("0X"));
    matches!(body, Some(b) if b.len() == 40 && b.bytes().all(|c| c.is_ascii_hexdigit()))
}

/// One chain's deduplicated scores plus every deployment address that maps
/// onto them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredChain {
    pub chain: String,
    /// One record per canonical hash.
    pub records: Vec<ScoreRecord>,
    /// Lowercased address → index into `records`.
    pub address_index: BTreeMap<String, usize>,
}

impl ScoredChain {
    pub fn new(chain: impl Into<String>, records: Vec<ScoreRecord>) -> Self {
        let address_index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (normalize_address(&r.address), i))
            .collect();
        ScoredChain {
            chain: chain.into(),
            records,
            address_index,
        }
    }

    /// Register an extra deployment address for an already-scored hash.
    pub fn add_alias(&mut self, address: &str, hash: &CodeHash) -> bool {
        match self.records.iter().position(|r| &r.canonical_hash == hash) {
            Some(i) => {
                self.address_index.insert(normalize_address(address), i);
                true
            }
            None => false,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn lookup(&self, address: &str) -> Option<&ScoreRecord> {
        self.address_index
            .get(&normalize_address(address))
            .map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
