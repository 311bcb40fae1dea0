//! Deduplicated corpus store: `contracts.jsonl` ordered by
//! `(chain, canonical hash)` plus `index.csv` mapping each key to its line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, PipelineError};
use crate::bytecode::{skeleton_hash, CanonicalBytecode, CodeHash};
use crate::records::{is_valid_address, normalize_address};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub chain: String,
    pub address: String,
    pub bytecode_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredContract {
    pub chain: String,
    pub canonical_hash: CodeHash,
    pub skeleton_hash: CodeHash,
    pub original_len: usize,
    pub stripped_len: usize,
    /// Canonical (metadata-stripped) runtime bytecode.
    pub bytecode_hex: String,
    /// Sorted, lowercased deployment addresses.
    pub addresses: Vec<String>,
}

impl StoredContract {
    pub fn key(&self) -> (String, CodeHash) {
        (self.chain.clone(), self.canonical_hash)
    }

    pub fn code(&self) -> Result<CanonicalBytecode, PipelineError> {
        let bytes = hex::decode(&self.bytecode_hex)
            .map_err(|e| PipelineError::Validation(format!("stored bytecode {}: {e}", self.canonical_hash)))?;
        Ok(CanonicalBytecode {
            canonical_hash: self.canonical_hash,
            original_len: self.original_len,
            stripped_len: bytes.len(),
            bytes,
        })
    }

    pub fn first_address(&self) -> &str {
        self.addresses.first().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    pub contracts: BTreeMap<(String, CodeHash), StoredContract>,
}

pub const CONTRACTS_FILE: &str = "contracts.jsonl";
pub const INDEX_FILE: &str = "index.csv";

impl Store {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(CONTRACTS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let mut contracts = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let c: StoredContract = serde_json::from_str(line)
                .map_err(|e| PipelineError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
            contracts.insert(c.key(), c);
        }
        Ok(Store { contracts })
    }

    pub fn load_or_empty(dir: &Path) -> Result<Self, PipelineError> {
        if dir.join(CONTRACTS_FILE).exists() {
            Store::load(dir)
        } else {
            Ok(Store::default())
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let mut lines = String::new();
        let mut index = String::from("chain,canonical_hash,line\n");
        for (i, c) in self.contracts.values().enumerate() {
            lines.push_str(&serde_json::to_string(c).expect("serializable"));
            lines.push('\n');
            index.push_str(&format!("{},{},{}\n", c.chain, c.canonical_hash, i + 1));
        }
        write_atomic(&dir.join(CONTRACTS_FILE), lines.as_bytes())?;
        write_atomic(&dir.join(INDEX_FILE), index.as_bytes())
    }

    pub fn chains(&self) -> BTreeSet<String> {
        self.contracts.keys().map(|(c, _)| c.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredContract> {
        self.contracts.values()
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    /// Lowercased address → every `(chain, hash)` it was seen with.
    pub fn address_index(&self) -> BTreeMap<String, Vec<(String, CodeHash)>> {
        let mut m: BTreeMap<String, Vec<(String, CodeHash)>> = BTreeMap::new();
        for c in self.iter() {
            for a in &c.addresses {
                m.entry(a.clone()).or_default().push(c.key());
            }
        }
        m
    }

    /// Canonical hashes present on two or more chains.
    pub fn cross_chain_hashes(&self) -> BTreeSet<CodeHash> {
        let mut chains: BTreeMap<CodeHash, BTreeSet<&str>> = BTreeMap::new();
        for c in self.iter() {
            chains.entry(c.canonical_hash).or_default().insert(&c.chain);
        }
        chains.into_iter().filter(|(_, s)| s.len() > 1).map(|(h, _)| h).collect()
    }

    fn insert(&mut self, chain: &str, address: &str, code: &CanonicalBytecode) -> bool {
        let key = (chain.to_string(), code.canonical_hash);
        let addr = normalize_address(address);
        match self.contracts.get_mut(&key) {
            Some(c) => {
                if c.addresses.contains(&addr) {
                    return false;
                }
                c.addresses.push(addr);
                c.addresses.sort();
                true
            }
            None => {
                self.contracts.insert(
                    key,
                    StoredContract {
                        chain: chain.to_string(),
                        canonical_hash: code.canonical_hash,
                        skeleton_hash: skeleton_hash(&code.bytes),
                        original_len: code.original_len,
                        stripped_len: code.stripped_len,
                        bytecode_hex: hex::encode(&code.bytes),
                        addresses: vec![addr],
                    },
                );
                true
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Malformed {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestLog {
    pub rows: usize,
    /// Rows skipped by the chain filter.
    pub filtered: usize,
    pub accepted: usize,
    pub new_contracts: usize,
    pub new_addresses: usize,
    pub malformed: Vec<Malformed>,
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, PipelineError> {
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(f))
}

fn parse_row(rec: &csv::StringRecord, cols: (usize, usize, usize)) -> Result<(CorpusRow, CanonicalBytecode), String> {
    let get = |i: usize| rec.get(i).ok_or_else(|| "missing field".to_string());
    let chain = get(cols.0)?.to_ascii_lowercase();
    if chain.is_empty() || chain.contains(',') {
        return Err("empty chain".into());
    }
    let address = get(cols.1)?;
    if !is_valid_address(address) {
        return Err(format!("malformed address '{address}'"));
    }
    let bytecode_hex = get(cols.2)?.to_string();
    let code = CanonicalBytecode::from_hex(&bytecode_hex).map_err(|e| e.to_string())?;
    Ok((CorpusRow { chain, address: normalize_address(address), bytecode_hex }, code))
}

/// Read a corpus CSV (`chain,address,bytecode_hex` header) into the store.
/// With `chain` set, rows of other chains are skipped. Nothing is written
/// when the malformed share exceeds `abort_fraction`.
pub fn ingest(
    path: &Path,
    store_dir: &Path,
    chain: Option<&str>,
    abort_fraction: f64,
) -> Result<(Store, IngestLog), PipelineError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| PipelineError::Validation(format!("{}: missing column '{name}'", path.display())))
    };
    let cols = (col("chain")?, col("address")?, col("bytecode_hex")?);
    let want = chain.map(str::to_ascii_lowercase);

    let mut store = Store::load_or_empty(store_dir)?;
    let before = store.len();
    let mut log = IngestLog { rows: 0, filtered: 0, accepted: 0, new_contracts: 0, new_addresses: 0, malformed: vec![] };
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        log.rows += 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                log.malformed.push(Malformed { line, reason: e.to_string() });
                continue;
            }
        };
        match parse_row(&rec, cols) {
            Ok((row, code)) => {
                if want.as_deref().is_some_and(|w| w != row.chain) {
                    log.filtered += 1;
                    continue;
                }
                log.accepted += 1;
                if store.insert(&row.chain, &row.address, &code) {
                    log.new_addresses += 1;
                }
            }
            Err(reason) => {
                log::warn!("{}:{line}: skipped: {reason}", path.display());
                log.malformed.push(Malformed { line, reason });
            }
        }
    }
    let considered = log.rows - log.filtered;
    if considered > 0 && log.malformed.len() as f64 > abort_fraction * considered as f64 {
        return Err(PipelineError::AbortThresholdExceeded { malformed: log.malformed.len(), rows: considered });
    }
    log.new_contracts = store.len() - before;
    store.save(store_dir)?;
    Ok((store, log))
}
