//! Behavioral DDR3 device with a per-cell retention fault model.
//!
//! Charge decays linearly over a cell's effective retention time
//! `T_ret(T_ref) * 2^((temperature_ref - temperature) / halving) * restore_level`.
//! A row senses its cells at every ACT and REF; a cell whose charge has run
//! out by then loses its value for good. Reads with a short tRCD additionally
//! misread cells whose remaining charge is below the marginal threshold.

mod cells;
mod profile;

use std::ops::RangeInclusive;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use crate::geometry::{DeviceGeometry, GeometryError};
use crate::isa::Instruction;
pub use cells::{Cell, CellArray};
pub use profile::{ModuleProfile, ProfileError, PROFILE_DIR_ENV};

pub const TEMPERATURE_RANGE: RangeInclusive<f64> = 0.0..=120.0;

/// Number of REF commands that together cover every row once.
pub const REFRESH_SLOTS: u32 = 8192;

pub const PS_PER_MS: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("temperature {0} C outside 0..=120")]
    Temperature(f64),
    #[error("`{0}` is not a device command")]
    NotACommand(Instruction),
    #[error("cannot move device time back from {now_ps} ps to {to_ps} ps")]
    TimeReversed { now_ps: u64, to_ps: u64 },
    #[error("expected {expected} bytes, observed {observed}")]
    LengthMismatch { expected: usize, observed: usize },
}

/// Timing the issuing backend actually used for the command being stepped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IssueContext {
    /// Idle cycles between the row's ACT and this RD.
    pub trcd_used: Option<u64>,
    /// Idle cycles between the row's ACT and this PRE.
    pub tras_used: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolFault {
    ActOnActiveBank,
    ColumnOnIdleBank,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommandOutcome {
    pub data: Option<Vec<u8>>,
    pub fault: Option<ProtocolFault>,
}

/// Retention time of a cell at `temperature_c` after a restore to `restore_level`.
pub fn effective_retention(
    t_ret_ref_ms: f64,
    temperature_c: f64,
    restore_level: f64,
    profile: &ModuleProfile,
) -> f64 {
    t_ret_ref_ms * profile.retention_scale(temperature_c) * restore_level
}

/// Number of byte positions at which the two buffers differ.
pub fn count_erroneous_bytes(expected: &[u8], observed: &[u8]) -> Result<usize, DeviceError> {
    if expected.len() != observed.len() {
        return Err(DeviceError::LengthMismatch {
            expected: expected.len(),
            observed: observed.len(),
        });
    }
    Ok(expected.iter().zip(observed).filter(|(a, b)| a != b).count())
}

pub fn build_device(
    geometry: DeviceGeometry,
    profile: ModuleProfile,
    temperature_c: f64,
    seed: u64,
) -> Result<Device, DeviceError> {
    geometry.validate()?;
    profile.validate()?;
    let cells = Arc::new(CellArray::new(geometry, &profile, seed));
    Device::new(cells, Arc::new(profile), temperature_c)
}

#[derive(Debug, Clone)]
struct RowState {
    /// `None` until first touched; the row then holds its discharged state.
    data: Option<Box<[u8]>>,
    /// Cells with reference retention below this (ms) have lost their charge
    /// but the row buffer has not been rewritten yet.
    pending_loss_ms: f64,
    last_restore_ps: u64,
    restore_level: f64,
}

impl Default for RowState {
    fn default() -> Self {
        RowState {
            data: None,
            pending_loss_ms: 0.0,
            last_restore_ps: 0,
            restore_level: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct OpenRow {
    row: u32,
    /// Decay seen at activation, in reference-retention milliseconds.
    sensed_decay_ms: f64,
}

#[derive(Debug, Clone)]
struct BankState {
    open: Option<OpenRow>,
    written_since_act: Vec<bool>,
    last_row: u32,
}

#[derive(Debug, Clone)]
pub struct Device {
    profile: Arc<ModuleProfile>,
    cells: Arc<CellArray>,
    temperature_c: f64,
    scale: f64,
    now_ps: u64,
    rows: Vec<RowState>,
    banks: Vec<BankState>,
    refresh_slot: u32,
}

impl Device {
    pub fn new(
        cells: Arc<CellArray>,
        profile: Arc<ModuleProfile>,
        temperature_c: f64,
    ) -> Result<Self, DeviceError> {
        if !TEMPERATURE_RANGE.contains(&temperature_c) {
            return Err(DeviceError::Temperature(temperature_c));
        }
        let g = cells.geometry();
        let bank = BankState {
            open: None,
            written_since_act: vec![false; g.num_columns as usize],
            last_row: 0,
        };
        Ok(Device {
            scale: profile.retention_scale(temperature_c),
            profile,
            temperature_c,
            now_ps: 0,
            rows: vec![RowState::default(); g.total_rows()],
            banks: vec![bank; g.num_banks as usize],
            refresh_slot: 0,
            cells,
        })
    }

    /// A device with the same cells and temperature in its power-on state.
    pub fn fresh(&self) -> Device {
        Device::new(self.cells.clone(), self.profile.clone(), self.temperature_c)
            .expect("temperature already validated")
    }

    pub fn geometry(&self) -> DeviceGeometry {
        self.cells.geometry()
    }

    pub fn profile(&self) -> &ModuleProfile {
        &self.profile
    }

    pub fn cells(&self) -> &Arc<CellArray> {
        &self.cells
    }

    pub fn temperature_c(&self) -> f64 {
        self.temperature_c
    }

    pub fn now_ps(&self) -> u64 {
        self.now_ps
    }

    pub fn set_time_ps(&mut self, to_ps: u64) -> Result<(), DeviceError> {
        if to_ps < self.now_ps {
            return Err(DeviceError::TimeReversed {
                now_ps: self.now_ps,
                to_ps,
            });
        }
        self.now_ps = to_ps;
        Ok(())
    }

    pub fn open_row(&self, bank: u32) -> Option<u32> {
        self.banks.get(bank as usize)?.open.as_ref().map(|o| o.row)
    }

    pub fn elapsed_since_restore_ms(&self, bank: u32, row: u32) -> Result<f64, DeviceError> {
        let idx = self.index(bank, row)?;
        Ok((self.now_ps - self.rows[idx].last_restore_ps) as f64 / PS_PER_MS as f64)
    }

    pub fn restore_level(&self, bank: u32, row: u32) -> Result<f64, DeviceError> {
        Ok(self.rows[self.index(bank, row)?].restore_level)
    }

    /// Current stored contents of a row, with any pending charge loss applied.
    pub fn stored_row(&mut self, bank: u32, row: u32) -> Result<Vec<u8>, DeviceError> {
        let idx = self.index(bank, row)?;
        self.materialize(bank, row, idx);
        Ok(self.rows[idx].data.as_deref().expect("materialized").to_vec())
    }

    fn index(&self, bank: u32, row: u32) -> Result<usize, DeviceError> {
        let g = self.geometry();
        g.check_bank(bank)?;
        g.check_row(row)?;
        Ok(g.row_index(bank, row))
    }

    /// Senses a row at `at_ps`: cells whose charge ran out since the last
    /// restore are marked lost. Returns the decay in reference milliseconds.
    fn sense(&mut self, idx: usize, at_ps: u64) -> f64 {
        let state = &mut self.rows[idx];
        let gap_ms = at_ps.saturating_sub(state.last_restore_ps) as f64 / PS_PER_MS as f64;
        let decay = gap_ms / (self.scale * state.restore_level);
        if decay > state.pending_loss_ms {
            state.pending_loss_ms = decay;
        }
        decay
    }

    fn restore(&mut self, idx: usize, at_ps: u64, level: f64) {
        let state = &mut self.rows[idx];
        state.last_restore_ps = at_ps;
        state.restore_level = level;
    }

    fn materialize(&mut self, bank: u32, row: u32, idx: usize) {
        let row_bytes = self.geometry().row_bytes();
        let state = &mut self.rows[idx];
        let loss = std::mem::take(&mut state.pending_loss_ms);
        let Some(data) = state.data.as_mut() else {
            // Power-on content is the discharged state, which further loss
            // cannot change.
            state.data = Some(self.cells.discharged_bytes(bank, row, 0..row_bytes).into());
            return;
        };
        if loss == f64::INFINITY {
            data.copy_from_slice(&self.cells.discharged_bytes(bank, row, 0..row_bytes));
        } else if loss > 0.0 {
            let cells = &self.cells;
            cells.for_each_below(bank, row, loss, |c| {
                let (byte, b) = ((c.bit / 8) as usize, c.bit % 8);
                let v = cells.discharged_bit(bank, row, c.bit);
                data[byte] = (data[byte] & !(1 << b)) | (v << b);
            });
        }
    }

    fn column_range(&self, col: u32) -> std::ops::Range<usize> {
        let bpc = self.geometry().bytes_per_column as usize;
        col as usize * bpc..(col as usize + 1) * bpc
    }

    /// Applies one command at the current device time.
    pub fn step_command(
        &mut self,
        cmd: &Instruction,
        ctx: IssueContext,
    ) -> Result<CommandOutcome, DeviceError> {
        let g = self.geometry();
        if let Some(bank) = cmd.bank() {
            g.check_bank(bank as u32)?;
        }
        match *cmd {
            Instruction::Act { bank, row } => {
                let bank = bank as u32;
                let idx = self.index(bank, row)?;
                let b = &self.banks[bank as usize];
                if b.open.is_some() {
                    return Ok(fault(ProtocolFault::ActOnActiveBank));
                }
                let decay = self.sense(idx, self.now_ps);
                let b = &mut self.banks[bank as usize];
                b.written_since_act.fill(false);
                b.open = Some(OpenRow {
                    row,
                    sensed_decay_ms: decay,
                });
                b.last_row = row;
                Ok(CommandOutcome::default())
            }
            Instruction::Pre { bank } => {
                let bank = bank as u32;
                let Some(open) = self.banks[bank as usize].open.take() else {
                    return Ok(CommandOutcome::default());
                };
                let idx = g.row_index(bank, open.row);
                let min_safe = self.profile.min_safe_tras as f64;
                let level = match ctx.tras_used {
                    Some(t) if t < 2 => {
                        self.rows[idx].pending_loss_ms = f64::INFINITY;
                        1.0
                    }
                    Some(t) => (t as f64 / min_safe).min(1.0),
                    None => 1.0,
                };
                self.restore(idx, self.now_ps, level);
                Ok(CommandOutcome::default())
            }
            Instruction::Rd { bank, col } => {
                let (bank, col) = (bank as u32, col as u32);
                g.check_column(col)?;
                let range = self.column_range(col);
                let b = &self.banks[bank as usize];
                let Some(open) = b.open.clone() else {
                    let data = self.cells.discharged_bytes(bank, b.last_row, range);
                    return Ok(CommandOutcome {
                        data: Some(data),
                        fault: Some(ProtocolFault::ColumnOnIdleBank),
                    });
                };
                let fresh_write = b.written_since_act[col as usize];
                let idx = g.row_index(bank, open.row);
                self.materialize(bank, open.row, idx);
                let stored = &self.rows[idx].data.as_deref().expect("materialized")[range.clone()];
                let mut data = stored.to_vec();
                let min_safe = self.profile.min_safe_trcd as u64;
                match ctx.trcd_used {
                    Some(t) if t + 1 < min_safe => data.iter_mut().for_each(|v| *v = !*v),
                    Some(t) if t + 1 == min_safe && !fresh_write => {
                        // Cells that kept some charge but less than q0 misread;
                        // cells already lost read their discharged value.
                        let decay = open.sensed_decay_ms;
                        let q0 = self.profile.marginal_charge_threshold;
                        let first_bit = (range.start * 8) as u32;
                        let last_bit = (range.end * 8) as u32;
                        let cells = &self.cells;
                        let row = open.row;
                        let invert_all = q0 >= 1.0 && decay > 0.0;
                        if invert_all {
                            data.iter_mut().for_each(|v| *v = !*v);
                        }
                        let mut flip = |c: Cell| {
                            if (first_bit..last_bit).contains(&c.bit) {
                                let byte = ((c.bit - first_bit) / 8) as usize;
                                data[byte] ^= 1 << (c.bit % 8);
                            }
                        };
                        if invert_all {
                            cells.for_each_below(bank, row, decay, &mut flip);
                        } else if q0 > 0.0 && q0 < 1.0 {
                            cells.for_each_below(bank, row, decay / (1.0 - q0), |c| {
                                if c.retention_ms >= decay {
                                    flip(c);
                                }
                            });
                        }
                    }
                    _ => {}
                }
                Ok(CommandOutcome {
                    data: Some(data),
                    fault: None,
                })
            }
            Instruction::Wr { bank, col, pattern } => {
                let (bank, col) = (bank as u32, col as u32);
                g.check_column(col)?;
                let Some(open) = self.banks[bank as usize].open.clone() else {
                    return Ok(fault(ProtocolFault::ColumnOnIdleBank));
                };
                let idx = g.row_index(bank, open.row);
                self.materialize(bank, open.row, idx);
                let range = self.column_range(col);
                self.rows[idx].data.as_deref_mut().expect("materialized")[range].fill(pattern);
                self.banks[bank as usize].written_since_act[col as usize] = true;
                Ok(CommandOutcome::default())
            }
            Instruction::Ref => {
                self.refresh_slot_at(self.refresh_slot, self.now_ps);
                self.refresh_slot = (self.refresh_slot + 1) % REFRESH_SLOTS;
                Ok(CommandOutcome::default())
            }
            Instruction::Wait { .. } | Instruction::End => Err(DeviceError::NotACommand(*cmd)),
        }
    }

    fn rows_per_slot(&self) -> u32 {
        self.geometry().num_rows.div_ceil(REFRESH_SLOTS)
    }

    fn refresh_slot_at(&mut self, slot: u32, at_ps: u64) {
        let g = self.geometry();
        let per = self.rows_per_slot();
        let start = slot * per;
        let end = (start + per).min(g.num_rows);
        for bank in 0..g.num_banks {
            let open = self.open_row(bank);
            for row in start..end {
                if open == Some(row) {
                    continue;
                }
                let idx = g.row_index(bank, row);
                self.sense(idx, at_ps);
                self.restore(idx, at_ps, 1.0);
            }
        }
    }

    /// Equivalent to issuing `count` REF commands at `first_ps`,
    /// `first_ps + period_ps`, ... without stepping each one. Device time is
    /// left untouched.
    pub fn apply_periodic_refresh(&mut self, first_ps: u64, period_ps: u64, count: u64) {
        if count == 0 {
            return;
        }
        let g = self.geometry();
        let per = self.rows_per_slot();
        let slots = REFRESH_SLOTS as u64;
        for bank in 0..g.num_banks {
            let open = self.open_row(bank);
            for row in 0..g.num_rows {
                if open == Some(row) {
                    continue;
                }
                let slot = (row / per) as u64;
                let j0 = (slot + slots - self.refresh_slot as u64) % slots;
                if j0 >= count {
                    continue;
                }
                let n = (count - 1 - j0) / slots + 1;
                let idx = g.row_index(bank, row);
                let t1 = first_ps + j0 * period_ps;
                self.sense(idx, t1);
                self.restore(idx, t1, 1.0);
                if n >= 2 {
                    // Every later refresh of the row sees one full cycle of decay.
                    self.sense(idx, t1 + slots * period_ps);
                    self.restore(idx, t1 + (n - 1) * slots * period_ps, 1.0);
                }
            }
        }
        self.refresh_slot = ((self.refresh_slot as u64 + count) % slots) as u32;
    }
}

fn fault(kind: ProtocolFault) -> CommandOutcome {
    CommandOutcome {
        data: None,
        fault: Some(kind),
    }
}

#[cfg(test)]
mod tests;
