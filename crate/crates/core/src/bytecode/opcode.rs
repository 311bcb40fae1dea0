//! Opcode constants and mnemonics.

#[rustfmt::skip]
const NAMES: [&str; 256] = [
    "STOP","ADD","MUL","SUB","DIV","SDIV","MOD","SMOD","ADDMOD","MULMOD","EXP","SIGNEXTEND","0x0c","0x0d","0x0e","0x0f",
    "LT","GT","SLT","SGT","EQ","ISZERO","AND","OR","XOR","NOT","BYTE","SHL","SHR","SAR","0x1e","0x1f",
    "KECCAK256","0x21","0x22","0x23","0x24","0x25","0x26","0x27","0x28","0x29","0x2a","0x2b","0x2c","0x2d","0x2e","0x2f",
    "ADDRESS","BALANCE","ORIGIN","CALLER","CALLVALUE","CALLDATALOAD","CALLDATASIZE","CALLDATACOPY","CODESIZE","CODECOPY","GASPRICE","EXTCODESIZE","EXTCODECOPY","RETURNDATASIZE","RETURNDATACOPY","EXTCODEHASH",
    "BLOCKHASH","COINBASE","TIMESTAMP","NUMBER","PREVRANDAO","GASLIMIT","CHAINID","SELFBALANCE","BASEFEE","BLOBHASH","BLOBBASEFEE","0x4b","0x4c","0x4d","0x4e","0x4f",
    "POP","MLOAD","MSTORE","MSTORE8","SLOAD","SSTORE","JUMP","JUMPI","PC","MSIZE","GAS","JUMPDEST","TLOAD","TSTORE","MCOPY","PUSH0",
    "PUSH1","PUSH2","PUSH3","PUSH4","PUSH5","PUSH6","PUSH7","PUSH8","PUSH9","PUSH10","PUSH11","PUSH12","PUSH13","PUSH14","PUSH15","PUSH16",
    "PUSH17","PUSH18","PUSH19","PUSH20","PUSH21","PUSH22","PUSH23","PUSH24","PUSH25","PUSH26","PUSH27","PUSH28","PUSH29","PUSH30","PUSH31","PUSH32",
    "DUP1","DUP2","DUP3","DUP4","DUP5","DUP6","DUP7","DUP8","DUP9","DUP10","DUP11","DUP12","DUP13","DUP14","DUP15","DUP16",
    "SWAP1","SWAP2","SWAP3","SWAP4","SWAP5","SWAP6","SWAP7","SWAP8","SWAP9","SWAP10","SWAP11","SWAP12","SWAP13","SWAP14","SWAP15","SWAP16",
    "LOG0","LOG1","LOG2","LOG3","LOG4","0xa5","0xa6","0xa7","0xa8","0xa9","0xaa","0xab","0xac","0xad","0xae","0xaf",
    "0xb0","0xb1","0xb2","0xb3","0xb4","0xb5","0xb6","0xb7","0xb8","0xb9","0xba","0xbb","0xbc","0xbd","0xbe","0xbf",
    "0xc0","0xc1","0xc2","0xc3","0xc4","0xc5","0xc6","0xc7","0xc8","0xc9","0xca","0xcb","0xcc","0xcd","0xce","0xcf",
    "0xd0","0xd1","0xd2","0xd3","0xd4","0xd5","0xd6","0xd7","0xd8","0xd9","0xda","0xdb","0xdc","0xdd","0xde","0xdf",
    "0xe0","0xe1","0xe2","0xe3","0xe4","0xe5","0xe6","0xe7","0xe8","0xe9","0xea","0xeb","0xec","0xed","0xee","0xef",
    "CREATE","CALL","CALLCODE","RETURN","DELEGATECALL","CREATE2","0xf6","0xf7","0xf8","0xf9","STATICCALL","0xfb","0xfc","REVERT","INVALID","SELFDESTRUCT",
];

/// Mnemonic for an opcode byte; unassigned bytes render as `0xNN`.
pub fn name(op: u8) -> &'static str {
    NAMES[op as usize]
}

/// Reverse lookup of [`name`].
pub fn from_name(mnemonic: &str) -> Option<u8> {
    NAMES.iter().position(|n| n.eq_ignore_ascii_case(mnemonic)).map(|i| i as u8)
}

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const RETURNDATASIZE: u8 = 0x3d;
pub const RETURNDATACOPY: u8 = 0x3e;
pub const GAS: u8 = 0x5a;
pub const PUSH0: u8 = 0x5f;
pub const PUSH1: u8 = 0x60;
pub const PUSH4: u8 = 0x63;
pub const PUSH20: u8 = 0x73;
pub const PUSH32: u8 = 0x7f;
pub const CALL: u8 = 0xf1;
pub const CALLCODE: u8 = 0xf2;
pub const DELEGATECALL: u8 = 0xf4;
pub const STATICCALL: u8 = 0xfa;

/// Number of immediate bytes that follow `op`.
#[inline]
pub fn immediate_len(op: u8) -> usize {
    if (PUSH1..=PUSH32).contains(&op) {
        (op - PUSH1 + 1) as usize
    } else {
        0
    }
}

/// Opcodes that move control or data across a contract boundary.
pub const EXTERNAL_CALL_OPS: [u8; 7] = [
    CALL,
    CALLCODE,
    DELEGATECALL,
    STATICCALL,
    GAS,
    RETURNDATASIZE,
    RETURNDATACOPY,
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_widths() {
        assert_eq!(immediate_len(PUSH0), 0);
        assert_eq!(immediate_len(PUSH1), 1);
        assert_eq!(immediate_len(PUSH4), 4);
        assert_eq!(immediate_len(PUSH32), 32);
        assert_eq!(immediate_len(0x80), 0);
    }

    #[test]
    fn names_round_trip() {
        for op in 0..=255u8 {
            assert_eq!(from_name(name(op)), Some(op));
        }
        assert_eq!(name(DELEGATECALL), "DELEGATECALL");
        assert_eq!(name(0x63), "PUSH4");
    }
}
