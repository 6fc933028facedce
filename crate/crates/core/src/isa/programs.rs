//! Canned test programs.
//!
//! The `append_*` builders add one self-contained block (ending with the
//! bank precharged and tRP satisfied) to an open sequence and return how many
//! cycles the block occupies, so callers can pad blocks to equal length.

use super::{gen_act, gen_end, gen_pre, gen_rd, gen_wr, InstructionSequence, IsaError};
use crate::geometry::DeviceGeometry;
use crate::timing::TimingParams;

/// Writes `pattern` to every column of a row with the given timings:
///
/// ```text
/// ACT; WAIT(tRCD); { WR; WAIT(tBL) } x columns; WAIT(tCL + tWR); PRE; WAIT(tRP)
/// ```
pub fn append_write_row(
    seq: &mut InstructionSequence,
    params: &TimingParams,
    bank: u32,
    row: u32,
    pattern: u8,
) -> Result<u64, IsaError> {
    let columns = seq.geometry().num_columns;
    seq.insert(gen_act(bank, row)?)?;
    seq.insert_wait(params.trcd)?;
    for col in 0..columns {
        seq.insert(gen_wr(bank, col, pattern)?)?;
        seq.insert_wait(params.tbl)?;
    }
    seq.insert_wait(params.tcl + params.twr)?;
    seq.insert(gen_pre(bank)?)?;
    seq.insert_wait(params.trp)?;
    Ok(2 + params.trcd as u64
        + columns as u64 * (1 + params.tbl as u64)
        + (params.tcl + params.twr) as u64
        + params.trp as u64)
}

/// Read analogue of [`append_write_row`]: RD in place of WR, and a final wait
/// of tCL (stretched if needed so ACT to PRE still covers tRAS).
pub fn append_read_row(
    seq: &mut InstructionSequence,
    params: &TimingParams,
    bank: u32,
    row: u32,
) -> Result<u64, IsaError> {
    let columns = seq.geometry().num_columns as u64;
    seq.insert(gen_act(bank, row)?)?;
    seq.insert_wait(params.trcd)?;
    for col in 0..columns as u32 {
        seq.insert(gen_rd(bank, col)?)?;
        seq.insert_wait(params.tbl)?;
    }
    let open = params.trcd as u64 + columns * (1 + params.tbl as u64);
    let tail = (params.tcl as u64).max((params.tras as u64).saturating_sub(open));
    seq.insert_wait(tail as u32)?;
    seq.insert(gen_pre(bank)?)?;
    seq.insert_wait(params.trp)?;
    Ok(2 + open + tail + params.trp as u64)
}

/// ACT, WR of a single column, PRE, all with the given timings.
pub fn append_write_column(
    seq: &mut InstructionSequence,
    params: &TimingParams,
    bank: u32,
    row: u32,
    col: u32,
    pattern: u8,
) -> Result<u64, IsaError> {
    let tail = params
        .write_recovery()
        .max((params.tras as u64).saturating_sub(params.trcd as u64 + 1));
    seq.insert(gen_act(bank, row)?)?;
    seq.insert_wait(params.trcd)?;
    seq.insert(gen_wr(bank, col, pattern)?)?;
    seq.insert_wait(tail as u32)?;
    seq.insert(gen_pre(bank)?)?;
    seq.insert_wait(params.trp)?;
    Ok(3 + params.trcd as u64 + tail + params.trp as u64)
}

/// ACT, WAIT(`trcd`), RD of one column, PRE. `trcd` may be below the
/// parameter set's tRCD; that is the point of the latency test.
pub fn append_read_column(
    seq: &mut InstructionSequence,
    params: &TimingParams,
    bank: u32,
    row: u32,
    col: u32,
    trcd: u32,
) -> Result<u64, IsaError> {
    let tail = (params.tcl as u64).max((params.tras as u64).saturating_sub(trcd as u64 + 1));
    seq.insert(gen_act(bank, row)?)?;
    seq.insert_wait(trcd)?;
    seq.insert(gen_rd(bank, col)?)?;
    seq.insert_wait(tail as u32)?;
    seq.insert(gen_pre(bank)?)?;
    seq.insert_wait(params.trp)?;
    Ok(3 + trcd as u64 + tail + params.trp as u64)
}

/// ACT, WAIT(`tras`), PRE, WAIT(tRP): a refresh of one row with a custom tRAS.
pub fn append_act_pre(
    seq: &mut InstructionSequence,
    params: &TimingParams,
    bank: u32,
    row: u32,
    tras: u32,
) -> Result<u64, IsaError> {
    seq.insert(gen_act(bank, row)?)?;
    seq.insert_wait(tras)?;
    seq.insert(gen_pre(bank)?)?;
    seq.insert_wait(params.trp)?;
    Ok(2 + tras as u64 + params.trp as u64)
}

/// Pads a block that used `used` cycles out to `target` cycles.
pub fn pad_block(seq: &mut InstructionSequence, used: u64, target: u64) -> Result<(), IsaError> {
    let extra = target.saturating_sub(used);
    seq.insert_wait(u32::try_from(extra).unwrap_or(u32::MAX))?;
    Ok(())
}

/// The row-write program: ACT, tRCD, one WR per column, write recovery, PRE,
/// tRP, END.
pub fn write_row(
    geometry: DeviceGeometry,
    params: &TimingParams,
    bank: u32,
    row: u32,
    pattern: u8,
) -> Result<InstructionSequence, IsaError> {
    let mut seq = InstructionSequence::with_capacity(geometry, 2 * geometry.num_columns as usize + 6);
    append_write_row(&mut seq, params, bank, row, pattern)?;
    seq.insert(gen_end())?;
    Ok(seq)
}

pub fn read_row(
    geometry: DeviceGeometry,
    params: &TimingParams,
    bank: u32,
    row: u32,
) -> Result<InstructionSequence, IsaError> {
    let mut seq = InstructionSequence::with_capacity(geometry, 2 * geometry.num_columns as usize + 6);
    append_read_row(&mut seq, params, bank, row)?;
    seq.insert(gen_end())?;
    Ok(seq)
}
