//! Fixed 64-bit instruction words.
//!
//! | bits   | field        |
//! |--------|--------------|
//! | 63..60 | opcode (0=ACT 1=PRE 2=RD 3=WR 4=REF 5=WAIT 6=END) |
//! | 59..56 | bank         |
//! | 55..32 | row          |
//! | 31..16 | column       |
//! | 15..8  | pattern byte |
//! | 19..0  | wait cycles (WAIT only) |
//!
//! Fields an opcode does not use must be zero.

use std::fmt;

use thiserror::Error;

use super::{Instruction, IsaError, MAX_WAIT_CYCLES};
use crate::geometry::{GeometryError, MAX_BANKS};

const OPCODE_SHIFT: u32 = 60;
const BANK_SHIFT: u32 = 56;
const ROW_SHIFT: u32 = 32;
const COL_SHIFT: u32 = 16;
const PATTERN_SHIFT: u32 = 8;

const BANK_MASK: u64 = 0xF << BANK_SHIFT;
const ROW_MASK: u64 = 0xFF_FFFF << ROW_SHIFT;
const COL_MASK: u64 = 0xFFFF << COL_SHIFT;
const PATTERN_MASK: u64 = 0xFF << PATTERN_SHIFT;
const WAIT_MASK: u64 = 0xF_FFFF;
const PAYLOAD_MASK: u64 = (1 << OPCODE_SHIFT) - 1;

const OP_ACT: u64 = 0;
const OP_PRE: u64 = 1;
const OP_RD: u64 = 2;
const OP_WR: u64 = 3;
const OP_REF: u64 = 4;
const OP_WAIT: u64 = 5;
const OP_END: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedInstruction(pub u64);

impl fmt::Display for EncodedInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

impl Instruction {
    /// Packs the instruction into its wire word. Fails only for values that
    /// do not fit their field (which the `gen_*` constructors never produce).
    pub fn encode(&self) -> Result<EncodedInstruction, IsaError> {
        let bank_bits = |bank: u8| -> Result<u64, IsaError> {
            if bank as u32 >= MAX_BANKS {
                return Err(GeometryError::Bank {
                    bank: bank as u32,
                    num_banks: MAX_BANKS,
                }
                .into());
            }
            Ok((bank as u64) << BANK_SHIFT)
        };
        let word = match *self {
            Instruction::Act { bank, row } => {
                if row >= 1 << 24 {
                    return Err(GeometryError::Row {
                        row,
                        num_rows: 1 << 24,
                    }
                    .into());
                }
                (OP_ACT << OPCODE_SHIFT) | bank_bits(bank)? | ((row as u64) << ROW_SHIFT)
            }
            Instruction::Pre { bank } => (OP_PRE << OPCODE_SHIFT) | bank_bits(bank)?,
            Instruction::Rd { bank, col } => {
                (OP_RD << OPCODE_SHIFT) | bank_bits(bank)? | ((col as u64) << COL_SHIFT)
            }
            Instruction::Wr { bank, col, pattern } => {
                (OP_WR << OPCODE_SHIFT)
                    | bank_bits(bank)?
                    | ((col as u64) << COL_SHIFT)
                    | ((pattern as u64) << PATTERN_SHIFT)
            }
            Instruction::Ref => OP_REF << OPCODE_SHIFT,
            Instruction::Wait { cycles } => {
                Instruction::check_wait(cycles)?;
                (OP_WAIT << OPCODE_SHIFT) | cycles as u64
            }
            Instruction::End => OP_END << OPCODE_SHIFT,
        };
        Ok(EncodedInstruction(word))
    }
}

impl EncodedInstruction {
    pub fn decode(self) -> Result<Instruction, IsaError> {
        let word = self.0;
        let malformed = |reason| IsaError::MalformedWord { word, reason };
        let opcode = word >> OPCODE_SHIFT;
        let used = match opcode {
            OP_ACT => BANK_MASK | ROW_MASK,
            OP_PRE => BANK_MASK,
            OP_RD => BANK_MASK | COL_MASK,
            OP_WR => BANK_MASK | COL_MASK | PATTERN_MASK,
            OP_REF | OP_END => 0,
            OP_WAIT => WAIT_MASK,
            _ => return Err(malformed("opcode out of range")),
        };
        if word & PAYLOAD_MASK & !used != 0 {
            return Err(malformed("nonzero bits in fields unused by the opcode"));
        }
        let bank = ((word & BANK_MASK) >> BANK_SHIFT) as u8;
        let row = ((word & ROW_MASK) >> ROW_SHIFT) as u32;
        let col = ((word & COL_MASK) >> COL_SHIFT) as u16;
        let pattern = ((word & PATTERN_MASK) >> PATTERN_SHIFT) as u8;
        Ok(match opcode {
            OP_ACT => Instruction::Act { bank, row },
            OP_PRE => Instruction::Pre { bank },
            OP_RD => Instruction::Rd { bank, col },
            OP_WR => Instruction::Wr { bank, col, pattern },
            OP_REF => Instruction::Ref,
            OP_WAIT => {
                let cycles = (word & WAIT_MASK) as u32;
                if cycles == 0 {
                    return Err(malformed("WAIT of zero cycles"));
                }
                debug_assert!(cycles <= MAX_WAIT_CYCLES);
                Instruction::Wait { cycles }
            }
            _ => Instruction::End,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("missing END")]
    MissingEnd,
    #[error("truncated word at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("malformed word at byte offset {offset}: {source}")]
    Malformed { offset: usize, source: IsaError },
    #[error("data after END at byte offset {offset}")]
    TrailingData { offset: usize },
}

impl StreamError {
    pub fn offset(&self) -> Option<usize> {
        match *self {
            StreamError::MissingEnd => None,
            StreamError::Truncated { offset }
            | StreamError::Malformed { offset, .. }
            | StreamError::TrailingData { offset } => Some(offset),
        }
    }
}

/// Serializes instructions as big-endian words. The caller is expected to
/// pass a sealed program; nothing is appended.
pub fn write_stream<'a>(
    instructions: impl IntoIterator<Item = &'a Instruction>,
) -> Result<Vec<u8>, IsaError> {
    let mut out = Vec::new();
    for instr in instructions {
        out.extend_from_slice(&instr.encode()?.0.to_be_bytes());
    }
    Ok(out)
}

/// Parses a stream of big-endian words that must end with exactly one END.
pub fn read_stream(bytes: &[u8]) -> Result<Vec<Instruction>, StreamError> {
    let mut out = Vec::with_capacity(bytes.len() / 8);
    let mut chunks = bytes.chunks(8);
    let mut offset = 0;
    while let Some(chunk) = chunks.next() {
        let word: [u8; 8] = chunk
            .try_into()
            .map_err(|_| StreamError::Truncated { offset })?;
        let instr = EncodedInstruction(u64::from_be_bytes(word))
            .decode()
            .map_err(|source| StreamError::Malformed { offset, source })?;
        out.push(instr);
        offset += 8;
        if instr == Instruction::End {
            if chunks.next().is_some() {
                return Err(StreamError::TrailingData { offset });
            }
            return Ok(out);
        }
    }
    Err(StreamError::MissingEnd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::*;
    use proptest::prelude::*;

    #[test]
    fn end_word() {
        assert_eq!(gen_end().encode().unwrap().0, 0x6000_0000_0000_0000);
    }

    #[test]
    fn hand_encoded_words() {
        // ACT b=3 r=0x12345: opcode 0, bank at 59..56, row at 55..32
        assert_eq!(
            gen_act(3, 0x12345).unwrap().encode().unwrap().0,
            0x0301_2345_0000_0000
        );
        assert_eq!(
            gen_wr(1, 3, 0xAA).unwrap().encode().unwrap().0,
            0x3100_0000_0003_AA00
        );
        assert_eq!(gen_wait(6).unwrap().encode().unwrap().0, 0x5000_0000_0000_0006);
    }

    #[test]
    fn malformed_words() {
        let bad = [
            0xF000_0000_0000_0000u64, // opcode 15
            0x7000_0000_0000_0000,    // opcode 7
            0x0000_0000_0000_0001,    // ACT with column/low bits set
            0x1000_0001_0000_0000,    // PRE with row bits
            0x2000_0000_0000_0100,    // RD with pattern bits
            0x3000_0000_0000_0001,    // WR with bits 7..0
            0x4100_0000_0000_0000,    // REF with bank
            0x5000_0000_0010_0000,    // WAIT with bit 20
            0x5000_0000_0000_0000,    // WAIT 0
            0x6000_0000_0000_0001,    // END with payload
        ];
        for word in bad {
            assert!(
                matches!(
                    EncodedInstruction(word).decode(),
                    Err(IsaError::MalformedWord { .. })
                ),
                "{word:#x} should be rejected"
            );
        }
    }

    #[test]
    fn stream_errors() {
        assert_eq!(read_stream(&[]), Err(StreamError::MissingEnd));
        assert_eq!(read_stream(&[]).unwrap_err().to_string(), "missing END");
        let end = 0x6000_0000_0000_0000u64.to_be_bytes();
        assert_eq!(read_stream(&end).unwrap(), vec![Instruction::End]);

        let mut trailing = end.to_vec();
        trailing.extend_from_slice(&end);
        assert_eq!(
            read_stream(&trailing),
            Err(StreamError::TrailingData { offset: 8 })
        );

        let mut bad = 0x4000_0000_0000_0000u64.to_be_bytes().to_vec();
        bad.extend_from_slice(&0xF000_0000_0000_0000u64.to_be_bytes());
        assert_eq!(read_stream(&bad).unwrap_err().offset(), Some(8));
        assert_eq!(
            read_stream(&end[..5]),
            Err(StreamError::Truncated { offset: 0 })
        );
    }

    pub(crate) fn arb_instruction() -> impl Strategy<Value = Instruction> {
        prop_oneof![
            (0u8..16, 0u32..(1 << 24)).prop_map(|(bank, row)| Instruction::Act { bank, row }),
            (0u8..16).prop_map(|bank| Instruction::Pre { bank }),
            (0u8..16, any::<u16>()).prop_map(|(bank, col)| Instruction::Rd { bank, col }),
            (0u8..16, any::<u16>(), any::<u8>())
                .prop_map(|(bank, col, pattern)| Instruction::Wr { bank, col, pattern }),
            Just(Instruction::Ref),
            (1u32..=MAX_WAIT_CYCLES).prop_map(|cycles| Instruction::Wait { cycles }),
            Just(Instruction::End),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(instr in arb_instruction()) {
            let word = instr.encode().unwrap();
            prop_assert_eq!(word.decode().unwrap(), instr);
        }

        #[test]
        fn decode_never_panics(word in any::<u64>()) {
            if let Ok(instr) = EncodedInstruction(word).decode() {
                prop_assert_eq!(instr.encode().unwrap().0, word);
            }
        }
    }
}
