//! Fixed-geometry tokenization for the surrogate model.

use serde::{Deserialize, Serialize};

/// Padding token. It coincides with the STOP byte; index 256 of the
/// embedding table is never produced.
pub const PAD_TOKEN: u16 = 0;

/// `n_segments × seg_len` byte tokens plus a prefix validity mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub seg_len: usize,
    pub n_segments: usize,
    /// Row-major `n_segments × seg_len` token grid.
    pub tokens: Vec<u16>,
    pub mask: Vec<bool>,
    /// Bytes dropped because the code exceeded `n_segments · seg_len`.
    pub truncated: usize,
}

impl TokenSequence {
    pub fn segment(&self, i: usize) -> &[u16] {
        &self.tokens[i * self.seg_len..(i + 1) * self.seg_len]
    }

    pub fn segment_mut(&mut self, i: usize) -> &mut [u16] {
        let l = self.seg_len;
        &mut self.tokens[i * l..(i + 1) * l]
    }

    /// Count of leading valid segments.
    pub fn n_valid(&self) -> usize {
        self.mask.iter().take_while(|m| **m).count()
    }
}

/// Slice `code` into `n_segments` windows of `seg_len` bytes.
///
/// # Panics
/// If `seg_len` or `n_segments` is zero.
pub fn segment(code: &[u8], seg_len: usize, n_segments: usize) -> TokenSequence {
    assert!(seg_len >= 1 && n_segments >= 1, "segment geometry must be positive");
    let capacity = seg_len * n_segments;
    let kept = code.len().min(capacity);
    let mut tokens = vec![PAD_TOKEN; capacity];
    for (slot, &b) in tokens.iter_mut().zip(&code[..kept]) {
        *slot = b as u16;
    }
    let valid = kept.div_ceil(seg_len);
    let mask = (0..n_segments).map(|i| i < valid).collect();
    TokenSequence {
        seg_len,
        n_segments,
        tokens,
        mask,
        truncated: code.len() - kept,
    }
}
