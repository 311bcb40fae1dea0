//! Runtime bytecode normalization, canonical identity, disassembly and
//! segmentation.
//!
//! Every downstream table keys contracts by [`CodeHash`], the keccak-256
//! digest of the metadata-stripped runtime code. Two deployments that differ
//! only in `0x` prefix, hex case, or compiler metadata trailer share a hash.

pub mod decode;
pub mod opcode;
pub mod segment;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest, Keccak256};
use thiserror::Error;

pub use decode::{decode, Instruction, OpcodeStream};
pub use segment::{segment, TokenSequence};

/// Name of the digest behind [`CodeHash`], stamped into every output.
pub const HASH_ALGORITHM: &str = "keccak256";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BytecodeError {
    #[error("malformed hex: {0}")]
    MalformedHex(String),
    #[error("empty bytecode")]
    EmptyBytecode,
}

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

/// 32-byte canonical digest of runtime code.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodeHash(pub [u8; 32]);

impl CodeHash {
    pub fn of(code: &[u8]) -> Self {
        CodeHash(keccak256(code))
    }

    pub fn to_hex(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for CodeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CodeHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CodeHash({})", self.to_hex())
    }
}

impl FromStr for CodeHash {
    type Err = BytecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = normalize(s)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| BytecodeError::MalformedHex(format!("hash must be 32 bytes: {s}")))?;
        Ok(CodeHash(arr))
    }
}

impl Serialize for CodeHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CodeHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Decode hex text, with or without a `0x` prefix, case-insensitively.
pub fn normalize(hex_text: &str) -> Result<Vec<u8>, BytecodeError> {
    let t = hex_text.trim();
    let body = t
        .strip_prefix("0x")
        .or_else(|| t.strip_prefix("0X"))
        .unwrap_or(t);
    if body.is_empty() {
        return Err(BytecodeError::EmptyBytecode);
    }
    if body.len() % 2 != 0 {
        return Err(BytecodeError::MalformedHex(format!(
            "odd number of hex digits ({})",
            body.len()
        )));
    }
    hex::decode(body).map_err(|e| BytecodeError::MalformedHex(e.to_string()))
}

/// Metadata-stripped runtime code and its identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalBytecode {
    pub bytes: Vec<u8>,
    pub canonical_hash: CodeHash,
    pub original_len: usize,
    pub stripped_len: usize,
}

impl CanonicalBytecode {
    pub fn from_hex(hex_text: &str) -> Result<Self, BytecodeError> {
        strip_metadata(&normalize(hex_text)?)
    }

    pub fn decode(&self) -> OpcodeStream {
        decode(&self.bytes)
    }

    pub fn segment(&self, seg_len: usize, n_segments: usize) -> TokenSequence {
        segment(&self.bytes, seg_len, n_segments)
    }

    pub fn had_metadata(&self) -> bool {
        self.stripped_len < self.original_len
    }
}

/// Length of a trailing CBOR metadata block (including the 2-byte length
/// suffix), if one is present.
///
/// The suffix is a big-endian `m`; the `m` bytes before it must start with a
/// CBOR map header (major type 5). At least one code byte must remain.
fn trailer_len(code: &[u8]) -> Option<usize> {
    let n = code.len();
    if n < 3 {
        return None;
    }
    let m = u16::from_be_bytes([code[n - 2], code[n - 1]]) as usize;
    if m == 0 || m + 2 >= n {
        return None;
    }
    let head = code[n - 2 - m];
    (head >> 5 == 5).then_some(m + 2)
}

/// Remove compiler metadata trailers and compute the canonical hash.
///
/// Trailers are peeled until none remains, which makes the operation
/// idempotent even when the exposed body happens to end in a trailer-shaped
/// suffix. Code with no recognizable trailer is kept as-is.
pub fn strip_metadata(bytes: &[u8]) -> Result<CanonicalBytecode, BytecodeError> {
    if bytes.is_empty() {
        return Err(BytecodeError::EmptyBytecode);
    }
    let mut end = bytes.len();
    while let Some(t) = trailer_len(&bytes[..end]) {
        end -= t;
    }
    let body = bytes[..end].to_vec();
    Ok(CanonicalBytecode {
        canonical_hash: CodeHash::of(&body),
        original_len: bytes.len(),
        stripped_len: body.len(),
        bytes: body,
    })
}

/// Hash of the code with every PUSH immediate zeroed.
///
/// Contracts that differ only in embedded constants (addresses, selectors,
/// literals) share a skeleton and therefore a family.
pub fn skeleton_hash(code: &[u8]) -> CodeHash {
    let mut skel = Vec::with_capacity(code.len());
    for ins in decode(code).iter() {
        skel.push(ins.opcode);
        skel.extend(std::iter::repeat(0u8).take(ins.size() - 1));
    }
    CodeHash::of(&skel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_accepts_prefix_and_case() {
        assert_eq!(normalize("0x6001").unwrap(), vec![0x60, 0x01]);
        assert_eq!(normalize("6001").unwrap(), vec![0x60, 0x01]);
        assert_eq!(normalize("0XaBcD").unwrap(), vec![0xab, 0xcd]);
    }

    #[test]
    fn normalize_rejects_bad_hex() {
        assert!(matches!(normalize("0x600"), Err(BytecodeError::MalformedHex(_))));
        assert!(matches!(normalize("0x60zz"), Err(BytecodeError::MalformedHex(_))));
        assert_eq!(normalize("0x"), Err(BytecodeError::EmptyBytecode));
        assert_eq!(normalize(""), Err(BytecodeError::EmptyBytecode));
    }

    fn cbor_map(payload_len: usize) -> Vec<u8> {
        // a1 = map(1); 64 "ipfs"; 58 22 = bytes(34) ...
        let mut m = vec![0xa1, 0x64, b'i', b'p', b'f', b's', 0x58, payload_len as u8];
        m.extend((0..payload_len).map(|i| i as u8 ^ 0x5a));
        m
    }

    #[test]
    fn strips_constructed_trailer() {
        let body = vec![0x60, 0x80, 0x60, 0x40, 0x52, 0x00, 0xfe];
        let map = cbor_map(34);
        let m = map.len();
        let mut code = body.clone();
        code.extend(&map);
        code.extend((m as u16).to_be_bytes());
        let c = strip_metadata(&code).unwrap();
        assert_eq!(c.bytes, body);
        assert_eq!(c.original_len, code.len());
        assert_eq!(c.stripped_len, body.len());
        assert_eq!(c.canonical_hash, CodeHash::of(&body));
    }

    #[test]
    fn short_code_unchanged() {
        let c = strip_metadata(&[0x60, 0x01]).unwrap();
        assert_eq!(c.bytes, vec![0x60, 0x01]);
        assert_eq!(c.stripped_len, 2);
        assert!(!c.had_metadata());
    }

    #[test]
    fn oversized_length_suffix_unchanged() {
        let code = vec![0x60, 0x01, 0xa1, 0x00, 0xff];
        let c = strip_metadata(&code).unwrap();
        assert_eq!(c.bytes, code);
    }

    #[test]
    fn non_map_head_unchanged() {
        // m = 2 points at 0x60, major type 3
        let code = vec![0x00, 0x60, 0x01, 0x00, 0x02];
        assert_eq!(strip_metadata(&code).unwrap().bytes, code);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(strip_metadata(&[]), Err(BytecodeError::EmptyBytecode));
    }

    #[test]
    fn hash_ignores_prefix_and_case() {
        let a = CanonicalBytecode::from_hex("0x6001AB").unwrap();
        let b = CanonicalBytecode::from_hex("6001ab").unwrap();
        assert_eq!(a.canonical_hash, b.canonical_hash);
    }

    #[test]
    fn code_hash_text_round_trip() {
        let h = CodeHash::of(b"abc");
        let parsed: CodeHash = h.to_hex().parse().unwrap();
        assert_eq!(parsed, h);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<CodeHash>(&json).unwrap(), h);
    }

    #[test]
    fn skeleton_ignores_push_immediates() {
        let a = [0x73].iter().chain([0x11u8; 20].iter()).chain(&[0x5a, 0xf4]).copied().collect::<Vec<_>>();
        let b = [0x73].iter().chain([0x22u8; 20].iter()).chain(&[0x5a, 0xf4]).copied().collect::<Vec<_>>();
        assert_ne!(CodeHash::of(&a), CodeHash::of(&b));
        assert_eq!(skeleton_hash(&a), skeleton_hash(&b));
        assert_ne!(skeleton_hash(&a), skeleton_hash(&[0x73, 0x00]));
    }
}
