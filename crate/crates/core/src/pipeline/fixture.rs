//! Self-contained multi-chain fixture: a corpus CSV, a label CSV and an
//! incident file built on the synthetic generator.
//!
//! Besides plain synthetic contracts the corpus carries cross-chain
//! redeployments, EIP-1167 clones of one implementation, a metadata-suffixed
//! duplicate, ERC-20 dispatchers and an ownership selector that appears only
//! in long (and therefore high-scoring) contracts.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_atomic, PipelineError};
use crate::bytecode::keccak256;
use crate::features::{minimal_proxy_runtime, Selector};
use crate::synthetic::{exact_targets, generate, SyntheticConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub chains: Vec<String>,
    pub per_chain: usize,
    /// Contracts deployed unchanged on every chain.
    pub shared: usize,
    pub k_features: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            chains: vec!["ethereum".into(), "bsc".into(), "polygon".into()],
            per_chain: 150,
            shared: 12,
            k_features: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub corpus_csv: String,
    pub labels_csv: String,
    pub incidents: String,
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub corpus: PathBuf,
    pub labels: PathBuf,
    pub incidents: PathBuf,
}

const ERC20: [&str; 6] = [
    "transfer(address,uint256)",
    "balanceOf(address)",
    "totalSupply()",
    "approve(address,uint256)",
    "transferFrom(address,address,uint256)",
    "allowance(address,address)",
];
const OWNERSHIP: &str = "transferOwnership(address)";
const LONG: usize = 400;

fn address(chain: &str, i: usize) -> String {
    let h = keccak256(format!("{chain}:{i}").as_bytes());
    format!("0x{}", hex::encode(&h[12..]))
}

fn dispatch(code: &mut Vec<u8>, sig: &str, dest: u16) {
    code.push(0x63);
    code.extend(Selector::from_signature(sig).0);
    code.push(0x14);
    code.push(0x61);
    code.extend(dest.to_be_bytes());
    code.push(0x57);
}

/// A CBOR map `{ "ipfs": bytes(34), "solc": bytes(3) }` plus its length.
fn metadata_trailer(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut t = vec![0xa2, 0x64];
    t.extend(b"ipfs");
    t.extend([0x58, 0x22]);
    t.extend(rng.gen::<[u8; 32]>());
    t.extend(rng.gen::<[u8; 2]>());
    t.push(0x64);
    t.extend(b"solc");
    t.extend([0x43, 0x00, 0x08, 0x13]);
    let m = t.len() as u16;
    t.extend(m.to_be_bytes());
    t
}

pub fn build(cfg: &FixtureConfig) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf1f7_0e00);
    let syn = |n: usize, seed: u64| {
        generate(&SyntheticConfig { n, k_features: cfg.k_features, seed, ..Default::default() })
    };
    let decorate = |rng: &mut ChaCha8Rng, mut code: Vec<u8>| {
        if rng.gen_bool(0.25) {
            for sig in ERC20 {
                dispatch(&mut code, sig, rng.gen());
            }
        }
        if code.len() >= LONG {
            dispatch(&mut code, OWNERSHIP, rng.gen());
        }
        code
    };

    let shared: Vec<Vec<u8>> = syn(cfg.shared, cfg.seed.wrapping_add(1_000))
        .into_iter()
        .map(|c| decorate(&mut rng, c.code))
        .collect();
    let implementation: [u8; 20] = rng.gen();

    let mut corpus = String::from("chain,address,bytecode_hex\n");
    let mut labels = String::from("address,s_tool");
    for k in 1..=cfg.k_features {
        labels.push_str(&format!(",f{k}"));
    }
    labels.push('\n');
    let mut by_chain: Vec<Vec<(String, f64)>> = Vec::new();

    for (ci, chain) in cfg.chains.iter().enumerate() {
        let mut codes: Vec<Vec<u8>> = syn(cfg.per_chain, cfg.seed.wrapping_add(ci as u64))
            .into_iter()
            .map(|c| decorate(&mut rng, c.code))
            .collect();
        codes.extend(shared.iter().cloned());
        for _ in 0..3 {
            codes.push(minimal_proxy_runtime(implementation));
        }
        let mut scored = Vec::new();
        for (i, code) in codes.iter().enumerate() {
            let addr = address(chain, i);
            corpus.push_str(&format!("{chain},{addr},0x{}\n", hex::encode(code)));
            let (s, f) = exact_targets(code, cfg.k_features);
            labels.push_str(&addr);
            labels.push_str(&format!(",{s}"));
            for v in f {
                labels.push_str(&format!(",{v}"));
            }
            labels.push('\n');
            scored.push((addr, s));
        }
        // same runtime as contract 0 with a compiler metadata trailer
        let mut dup = codes[0].clone();
        dup.extend(metadata_trailer(&mut rng));
        corpus.push_str(&format!("{chain},{},0x{}\n", address(chain, codes.len()), hex::encode(dup)));
        by_chain.push(scored);
    }
    corpus.push_str(&format!("{},0xnot-an-address,0x6001\n", cfg.chains[0]));

    let mut incidents = String::from("# name,chain,evidence,address...[,note=...]\n");
    for (ci, chain) in cfg.chains.iter().enumerate() {
        let mut ranked = by_chain[ci].clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let pick = ranked.choose(&mut rng).expect("nonempty chain");
        incidents.push_str(&format!("Drain-{ci},{chain},direct,{}\n", ranked[0].0));
        incidents.push_str(&format!(
            "Relay-{ci},{chain},tx_resolved,{},{},note=two contracts\n",
            ranked[ranked.len() / 2].0,
            pick.0
        ));
    }
    incidents.push_str(&format!("Ghost,{},direct,{}\n", cfg.chains[0], address("nowhere", 0)));

    Fixture { corpus_csv: corpus, labels_csv: labels, incidents }
}

/// Write `corpus.csv`, `labels.csv` and `incidents.txt` into `dir`.
pub fn write(dir: &Path, cfg: &FixtureConfig) -> Result<FixturePaths, PipelineError> {
    let f = build(cfg);
    let paths = FixturePaths {
        corpus: dir.join("corpus.csv"),
        labels: dir.join("labels.csv"),
        incidents: dir.join("incidents.txt"),
    };
    write_atomic(&paths.corpus, f.corpus_csv.as_bytes())?;
    write_atomic(&paths.labels, f.labels_csv.as_bytes())?;
    write_atomic(&paths.incidents, f.incidents.as_bytes())?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incident::parse_incidents;

    #[test]
    fn seeded_and_well_formed() {
        let cfg = FixtureConfig { per_chain: 20, shared: 3, ..Default::default() };
        let a = build(&cfg);
        assert_eq!(a, build(&cfg));
        assert_ne!(a, build(&FixtureConfig { seed: 1, ..cfg.clone() }));
        // header + 3 chains x (20 + 3 shared + 3 clones + 1 duplicate) + 1 bad row
        assert_eq!(a.corpus_csv.lines().count(), 1 + 3 * 27 + 1);
        assert_eq!(a.labels_csv.lines().count(), 1 + 3 * 26);
        assert_eq!(parse_incidents(&a.incidents).unwrap().len(), 7);
    }
}
