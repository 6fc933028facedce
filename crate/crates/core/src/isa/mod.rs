//! DDR instruction vocabulary and the sequence builder used to write test
//! programs.
//!
//! Programs are assembled one instruction at a time, in the same style a
//! host-side test would drive an FPGA memory controller:
//!
//! ```
//! use softmc_sim::geometry::DeviceGeometry;
//! use softmc_sim::isa::*;
//!
//! let mut iseq = InstructionSequence::new(DeviceGeometry::default());
//! iseq.insert(gen_act(0, 5)?)?;
//! iseq.insert(gen_wait(6)?)?;
//! iseq.insert(gen_wr(0, 3, 0xAA)?)?;
//! iseq.insert(gen_end())?;
//! assert!(iseq.is_sealed());
//! # Ok::<(), softmc_sim::isa::IsaError>(())
//! ```

mod codec;
pub mod programs;
mod text;

pub use codec::{read_stream, write_stream, EncodedInstruction, StreamError};
pub use text::ParseInstructionError;
pub(crate) use text::{parse_number as text_number, parse_tokens};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DeviceGeometry, GeometryError, MAX_BANKS, MAX_COLUMNS, MAX_ROWS};

/// Largest cycle count a single WAIT can carry (the 20-bit wait field).
pub const MAX_WAIT_CYCLES: u32 = (1 << 20) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("wait must be >= 1 cycle")]
    ZeroWait,
    #[error("wait of {0} cycles exceeds the per-instruction limit of {MAX_WAIT_CYCLES}")]
    WaitTooLong(u32),
    #[error("sequence is sealed by END; no further instructions may be inserted")]
    Sealed,
    #[error("sequence is not terminated by END")]
    Unsealed,
    #[error("sequence is empty")]
    Empty,
    #[error("END at position {0} is not the final instruction")]
    EndNotLast(usize),
    #[error("malformed instruction word {word:#018x}: {reason}")]
    MalformedWord { word: u64, reason: &'static str },
}

/// One DDR command (or control pseudo-command) of a test program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "UPPERCASE")]
pub enum Instruction {
    Act { bank: u8, row: u32 },
    Pre { bank: u8 },
    Rd { bank: u8, col: u16 },
    Wr { bank: u8, col: u16, pattern: u8 },
    Ref,
    Wait { cycles: u32 },
    End,
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Act { .. } => "ACT",
            Instruction::Pre { .. } => "PRE",
            Instruction::Rd { .. } => "RD",
            Instruction::Wr { .. } => "WR",
            Instruction::Ref => "REF",
            Instruction::Wait { .. } => "WAIT",
            Instruction::End => "END",
        }
    }

    pub fn bank(&self) -> Option<u8> {
        match *self {
            Instruction::Act { bank, .. }
            | Instruction::Pre { bank }
            | Instruction::Rd { bank, .. }
            | Instruction::Wr { bank, .. } => Some(bank),
            _ => None,
        }
    }

    /// True for the commands that reach the DRAM device (everything except WAIT and END).
    pub fn is_command(&self) -> bool {
        !matches!(self, Instruction::Wait { .. } | Instruction::End)
    }

    pub fn is_column(&self) -> bool {
        matches!(self, Instruction::Rd { .. } | Instruction::Wr { .. })
    }

    /// Checks every index this instruction carries against a geometry.
    pub fn check_geometry(&self, geometry: &DeviceGeometry) -> Result<(), GeometryError> {
        if let Some(bank) = self.bank() {
            geometry.check_bank(bank as u32)?;
        }
        match *self {
            Instruction::Act { row, .. } => geometry.check_row(row),
            Instruction::Rd { col, .. } | Instruction::Wr { col, .. } => {
                geometry.check_column(col as u32)
            }
            _ => Ok(()),
        }
    }

    fn check_wait(cycles: u32) -> Result<(), IsaError> {
        if cycles == 0 {
            return Err(IsaError::ZeroWait);
        }
        if cycles > MAX_WAIT_CYCLES {
            return Err(IsaError::WaitTooLong(cycles));
        }
        Ok(())
    }
}

fn wire_bank(bank: u32) -> Result<u8, GeometryError> {
    if bank >= MAX_BANKS {
        return Err(GeometryError::Bank {
            bank,
            num_banks: MAX_BANKS,
        });
    }
    Ok(bank as u8)
}

fn wire_col(col: u32) -> Result<u16, GeometryError> {
    if col >= MAX_COLUMNS {
        return Err(GeometryError::Column {
            col,
            num_columns: MAX_COLUMNS,
        });
    }
    Ok(col as u16)
}

pub fn gen_act(bank: u32, row: u32) -> Result<Instruction, IsaError> {
    if row >= MAX_ROWS {
        return Err(GeometryError::Row {
            row,
            num_rows: MAX_ROWS,
        }
        .into());
    }
    Ok(Instruction::Act {
        bank: wire_bank(bank)?,
        row,
    })
}

pub fn gen_pre(bank: u32) -> Result<Instruction, IsaError> {
    Ok(Instruction::Pre {
        bank: wire_bank(bank)?,
    })
}

pub fn gen_rd(bank: u32, col: u32) -> Result<Instruction, IsaError> {
    Ok(Instruction::Rd {
        bank: wire_bank(bank)?,
        col: wire_col(col)?,
    })
}

pub fn gen_wr(bank: u32, col: u32, pattern: u8) -> Result<Instruction, IsaError> {
    Ok(Instruction::Wr {
        bank: wire_bank(bank)?,
        col: wire_col(col)?,
        pattern,
    })
}

pub fn gen_ref() -> Instruction {
    Instruction::Ref
}

pub fn gen_wait(cycles: u32) -> Result<Instruction, IsaError> {
    Instruction::check_wait(cycles)?;
    Ok(Instruction::Wait { cycles })
}

pub fn gen_end() -> Instruction {
    Instruction::End
}

/// An ordered test program bound to a device geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionSequence {
    geometry: DeviceGeometry,
    instructions: Vec<Instruction>,
}

impl InstructionSequence {
    pub fn new(geometry: DeviceGeometry) -> Self {
        Self {
            geometry,
            instructions: Vec::new(),
        }
    }

    pub fn with_capacity(geometry: DeviceGeometry, capacity: usize) -> Self {
        Self {
            geometry,
            instructions: Vec::with_capacity(capacity),
        }
    }

    /// Builds a sequence from decoded instructions, checking every invariant.
    pub fn from_instructions(
        geometry: DeviceGeometry,
        instructions: impl IntoIterator<Item = Instruction>,
    ) -> Result<Self, IsaError> {
        let mut seq = Self::new(geometry);
        for instr in instructions {
            seq.insert(instr)?;
        }
        seq.validate()?;
        Ok(seq)
    }

    pub fn geometry(&self) -> &DeviceGeometry {
        &self.geometry
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        matches!(self.instructions.last(), Some(Instruction::End))
    }

    pub fn insert(&mut self, instr: Instruction) -> Result<&mut Self, IsaError> {
        if self.is_sealed() {
            return Err(IsaError::Sealed);
        }
        instr.check_geometry(&self.geometry)?;
        if let Instruction::Wait { cycles } = instr {
            Instruction::check_wait(cycles)?;
        }
        self.instructions.push(instr);
        Ok(self)
    }

    /// Inserts WAIT(cycles) when `cycles` is nonzero; a zero wait is a no-op.
    pub fn insert_wait(&mut self, cycles: u32) -> Result<&mut Self, IsaError> {
        let mut left = cycles;
        while left > 0 {
            let chunk = left.min(MAX_WAIT_CYCLES);
            self.insert(Instruction::Wait { cycles: chunk })?;
            left -= chunk;
        }
        Ok(self)
    }

    /// Execution precondition: non-empty, exactly one END and it is last.
    pub fn validate(&self) -> Result<(), IsaError> {
        if self.instructions.is_empty() {
            return Err(IsaError::Empty);
        }
        if let Some(pos) = self
            .instructions
            .iter()
            .position(|i| matches!(i, Instruction::End))
        {
            if pos != self.instructions.len() - 1 {
                return Err(IsaError::EndNotLast(pos));
            }
        } else {
            return Err(IsaError::Unsealed);
        }
        for instr in &self.instructions {
            instr.check_geometry(&self.geometry)?;
        }
        Ok(())
    }
}
