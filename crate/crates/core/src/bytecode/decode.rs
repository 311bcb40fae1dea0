//! Linear-sweep disassembly.
//!
//! A single forward pass: each byte at the cursor is an opcode, and `PUSHk`
//! swallows the next `k` bytes as its immediate. Nothing else is inferred, so
//! data sections are decoded as if they were code.

use super::opcode;

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: u8,
    /// Immediate bytes, zero-padded to the full `PUSHk` width when the code ends early.
    pub immediate: Vec<u8>,
    /// Set when the immediate ran past end-of-code.
    pub truncated: bool,
    consumed: usize,
}

impl Instruction {
    /// Bytes of the input this instruction actually covers.
    pub fn size(&self) -> usize {
        self.consumed
    }

    pub fn mnemonic(&self) -> &'static str {
        opcode::name(self.opcode)
    }

    /// PUSH4 immediate as a selector, if this is a complete PUSH4.
    pub fn push4(&self) -> Option<[u8; 4]> {
        if self.opcode == opcode::PUSH4 && !self.truncated {
            Some([
                self.immediate[0],
                self.immediate[1],
                self.immediate[2],
                self.immediate[3],
            ])
        } else {
            None
        }
    }
}

/// Decoded instruction sequence, offsets strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpcodeStream {
    pub items: Vec<Instruction>,
}

impl OpcodeStream {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Instruction> {
        self.items.iter()
    }

    pub fn contains_opcode(&self, op: u8) -> bool {
        self.items.iter().any(|i| i.opcode == op)
    }

    /// Total input bytes covered; equals the decoded input length.
    pub fn consumed_len(&self) -> usize {
        self.items.iter().map(Instruction::size).sum()
    }
}

/// Decode `code` into instructions. Total over all byte strings.
pub fn decode(code: &[u8]) -> OpcodeStream {
    let mut items = Vec::with_capacity(code.len() / 2 + 1);
    let mut pc = 0;
    while pc < code.len() {
        let op = code[pc];
        let width = opcode::immediate_len(op);
        let start = pc + 1;
        let end = (start + width).min(code.len());
        let mut immediate = code[start..end].to_vec();
        let truncated = immediate.len() < width;
        immediate.resize(width, 0);
        let consumed = 1 + (end - start);
        items.push(Instruction {
            offset: pc,
            opcode: op,
            immediate,
            truncated,
            consumed,
        });
        pc += consumed;
    }
    OpcodeStream { items }
}
