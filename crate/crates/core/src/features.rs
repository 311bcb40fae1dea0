//! Structural heuristics per contract: selectors, signature density,
//! ERC interface labels, proxy indicator and opcode histogram.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bytecode::{keccak256, opcode, BytecodeError, CanonicalBytecode, OpcodeStream};
use crate::metrics::{self, MetricsError};

/// 4-byte function selector.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Selector(pub [u8; 4]);

impl Selector {
    /// First four bytes of keccak-256 over a canonical signature string.
    pub fn from_signature(sig: &str) -> Self {
        let h = keccak256(sig.as_bytes());
        Selector([h[0], h[1], h[2], h[3]])
    }

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Selector({})", self.to_hex())
    }
}

impl FromStr for Selector {
    type Err = BytecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = crate::bytecode::normalize(s)?;
        let arr: [u8; 4] = b
            .try_into()
            .map_err(|_| BytecodeError::MalformedHex(format!("selector must be 4 bytes: {s}")))?;
        Ok(Selector(arr))
    }
}

impl Serialize for Selector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub type SelectorSet = BTreeSet<Selector>;

const ERC20_SIGNATURES: [&str; 5] = [
    "totalSupply()",
    "balanceOf(address)",
    "transfer(address,uint256)",
    "approve(address,uint256)",
    "transferFrom(address,address,uint256)",
];

const ERC721_SIGNATURES: [&str; 5] = [
    "balanceOf(address)",
    "ownerOf(uint256)",
    "approve(address,uint256)",
    "setApprovalForAll(address,bool)",
    "transferFrom(address,address,uint256)",
];

const SAFE_TRANSFER_FROM_OVERLOADS: [&str; 2] = [
    "safeTransferFrom(address,address,uint256)",
    "safeTransferFrom(address,address,uint256,bytes)",
];

pub static ERC20_CORE: Lazy<Vec<Selector>> =
    Lazy::new(|| ERC20_SIGNATURES.iter().map(|s| Selector::from_signature(s)).collect());
pub static ERC721_CORE: Lazy<Vec<Selector>> =
    Lazy::new(|| ERC721_SIGNATURES.iter().map(|s| Selector::from_signature(s)).collect());
pub static ERC721_SAFE_TRANSFER: Lazy<Vec<Selector>> = Lazy::new(|| {
    SAFE_TRANSFER_FROM_OVERLOADS
        .iter()
        .map(|s| Selector::from_signature(s))
        .collect()
});
pub static OWNER: Lazy<Selector> = Lazy::new(|| Selector::from_signature("owner()"));
pub static TRANSFER_OWNERSHIP: Lazy<Selector> =
    Lazy::new(|| Selector::from_signature("transferOwnership(address)"));

/// Unique, non-truncated PUSH4 immediates.
pub fn extract_selectors(stream: &OpcodeStream) -> SelectorSet {
    stream
        .iter()
        .filter_map(|i| i.push4())
        .map(Selector)
        .collect()
}

/// Unique selectors per KiB of runtime code.
pub fn signature_density(selector_count: usize, byte_len: usize) -> Result<f64, BytecodeError> {
    if byte_len == 0 {
        return Err(BytecodeError::EmptyBytecode);
    }
    Ok(selector_count as f64 / (byte_len as f64 / 1024.0))
}

/// `(erc20, erc721)` core-interface labels.
pub fn classify_erc(selectors: &SelectorSet) -> (bool, bool) {
    let erc20 = ERC20_CORE.iter().all(|s| selectors.contains(s));
    let erc721 = ERC721_CORE.iter().all(|s| selectors.contains(s))
        && ERC721_SAFE_TRANSFER.iter().any(|s| selectors.contains(s));
    (erc20, erc721)
}

pub const MINIMAL_PROXY_PREFIX: [u8; 10] = [0x36, 0x3d, 0x3d, 0x37, 0x3d, 0x3d, 0x3d, 0x36, 0x3d, 0x73];
pub const MINIMAL_PROXY_SUFFIX: [u8; 15] = [
    0x5a, 0xf4, 0x3d, 0x82, 0x80, 0x3e, 0x90, 0x3d, 0x91, 0x60, 0x2b, 0x57, 0xfd, 0x5b, 0xf3,
];

/// 45-byte EIP-1167 runtime forwarding to `implementation`.
pub fn minimal_proxy_runtime(implementation: [u8; 20]) -> Vec<u8> {
    let mut code = MINIMAL_PROXY_PREFIX.to_vec();
    code.extend_from_slice(&implementation);
    code.extend_from_slice(&MINIMAL_PROXY_SUFFIX);
    code
}

/// Strict EIP-1167 template match with any embedded address.
pub fn is_minimal_proxy(code: &[u8]) -> bool {
    code.len() == 45 && code[..10] == MINIMAL_PROXY_PREFIX && code[30..] == MINIMAL_PROXY_SUFFIX
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyIndicator {
    /// Broad heuristic: DELEGATECALL + RETURNDATACOPY + a short dispatch.
    pub proxy: bool,
    /// Exact EIP-1167 template.
    pub minimal: bool,
}

/// Broad delegatecall-forwarding indicator.
///
/// The "short forwarding dispatch" condition is a selector-count gate at
/// `t_proxy`; it is a stand-in rule and reports should say so.
pub fn proxy_indicator(
    code: &[u8],
    stream: &OpcodeStream,
    selectors: &SelectorSet,
    t_proxy: usize,
) -> ProxyIndicator {
    let proxy = stream.contains_opcode(opcode::DELEGATECALL)
        && stream.contains_opcode(opcode::RETURNDATACOPY)
        && selectors.len() <= t_proxy;
    ProxyIndicator {
        proxy,
        minimal: is_minimal_proxy(code),
    }
}

/// Per-opcode occurrence counts. Immediates are not opcodes.
#[derive(Clone, PartialEq, Eq)]
pub struct OpcodeHistogram(pub [u64; 256]);

impl Default for OpcodeHistogram {
    fn default() -> Self {
        OpcodeHistogram([0; 256])
    }
}

impl OpcodeHistogram {
    pub fn get(&self, op: u8) -> u64 {
        self.0[op as usize]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn nonzero(&self) -> impl Iterator<Item = (u8, u64)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(op, c)| (op as u8, *c))
    }
}

impl fmt::Debug for OpcodeHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map()
            .entries(self.nonzero().map(|(op, c)| (opcode::name(op), c)))
            .finish()
    }
}

impl Serialize for OpcodeHistogram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<u8, u64> = self.nonzero().collect();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OpcodeHistogram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = BTreeMap::<u8, u64>::deserialize(d)?;
        let mut h = OpcodeHistogram::default();
        for (op, c) in m {
            h.0[op as usize] = c;
        }
        Ok(h)
    }
}

pub fn opcode_histogram(stream: &OpcodeStream) -> OpcodeHistogram {
    let mut h = OpcodeHistogram::default();
    for i in stream.iter() {
        h.0[i.opcode as usize] += 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Maximum selector count for the broad proxy indicator.
    pub t_proxy: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { t_proxy: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralFeatures {
    pub selectors: SelectorSet,
    pub selector_count: usize,
    /// Selectors per KiB of stripped runtime.
    pub signature_density: f64,
    pub byte_len: usize,
    pub erc20: bool,
    pub erc721: bool,
    pub proxy: bool,
    pub minimal_proxy: bool,
    pub opcode_hist: OpcodeHistogram,
}

impl StructuralFeatures {
    pub fn extract(code: &CanonicalBytecode, cfg: &FeatureConfig) -> Self {
        let stream = code.decode();
        let selectors = extract_selectors(&stream);
        let (erc20, erc721) = classify_erc(&selectors);
        let px = proxy_indicator(&code.bytes, &stream, &selectors, cfg.t_proxy);
        let byte_len = code.bytes.len();
        StructuralFeatures {
            selector_count: selectors.len(),
            // canonical bytecode is never empty
            signature_density: signature_density(selectors.len(), byte_len.max(1)).unwrap_or(0.0),
            byte_len,
            erc20,
            erc721,
            proxy: px.proxy,
            minimal_proxy: px.minimal,
            opcode_hist: opcode_histogram(&stream),
            selectors,
        }
    }

    pub fn has_owner_entry(&self) -> bool {
        self.selectors.contains(&OWNER) || self.selectors.contains(&TRANSFER_OWNERSHIP)
    }
}

/// Tool-provided feature vector, ingested as opaque reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFeatureVector(pub Vec<f64>);

/// Reference bands for the score/structure correlations seen on production
/// corpora. Informational only.
pub const REFERENCE_LENGTH_CORR: (f64, f64) = (0.46, 0.72);
pub const REFERENCE_SELECTOR_CORR: (f64, f64) = (0.10, 0.27);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub n: usize,
    pub corr_length: f64,
    pub corr_selectors: f64,
    pub reference_length: (f64, f64),
    pub reference_selectors: (f64, f64),
}

/// Pearson correlation of score against byte length and selector count.
pub fn sanity_correlations(
    scores: &[f64],
    features: &[&StructuralFeatures],
) -> Result<SanityReport, MetricsError> {
    if scores.len() != features.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), features.len()));
    }
    let lens: Vec<f64> = features.iter().map(|f| f.byte_len as f64).collect();
    let sels: Vec<f64> = features.iter().map(|f| f.selector_count as f64).collect();
    Ok(SanityReport {
        n: scores.len(),
        corr_length: metrics::pcc(scores, &lens)?,
        corr_selectors: metrics::pcc(scores, &sels)?,
        reference_length: REFERENCE_LENGTH_CORR,
        reference_selectors: REFERENCE_SELECTOR_CORR,
    })
}
