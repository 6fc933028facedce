//! Retention, tRCD-reduction and tRAS-reduction experiments.
//!
//! Rows are processed in batches of `interleave_width`. Within a pass every
//! row's block is padded to the same length, so the time between a row's
//! restore in one pass and its activation in the next is the same for every
//! row of the batch; the wait between passes is trimmed so that this time is
//! exactly the tested interval.

use super::plan::{ManualRefresh, RefreshMode, RefreshStrategy};
use super::{CellOutcome, Experiment, ExperimentPlan, PlanCell, RoutineError, RowAddr, RowSelection};
use crate::backend::{Backend, ExecutionConfig, SimBackend};
use crate::device::{count_erroneous_bytes, Device, ModuleProfile};
use crate::geometry::DeviceGeometry;
use crate::isa::programs::{
    append_act_pre, append_read_column, append_read_row, append_write_column, append_write_row,
    pad_block,
};
use crate::isa::{gen_end, InstructionSequence, IsaError};
use crate::timing::{default_ddr3_params, TimingParams};

/// Temperature the latency experiments run at unless told otherwise.
pub const LATENCY_TEST_TEMPERATURE_C: f64 = 80.0;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

type Block<'a> = dyn FnMut(&mut InstructionSequence, RowAddr) -> Result<u64, IsaError> + 'a;

/// Length in cycles of one block built by `f`.
fn block_len(geometry: DeviceGeometry, f: &mut Block<'_>) -> Result<u64, IsaError> {
    let mut scratch = InstructionSequence::new(geometry);
    f(&mut scratch, RowAddr { bank: 0, row: 0 })
}

/// One block per row, each padded to `span` cycles, then END.
fn pass(
    geometry: DeviceGeometry,
    rows: &[RowAddr],
    span: u64,
    f: &mut Block<'_>,
) -> Result<InstructionSequence, IsaError> {
    let mut seq = InstructionSequence::new(geometry);
    for &r in rows {
        let used = f(&mut seq, r)?;
        pad_block(&mut seq, used, span)?;
    }
    seq.insert(gen_end())?;
    Ok(seq)
}

/// Accumulates erroneous-byte counts and a digest of everything read.
struct Tally {
    outcome: CellOutcome,
}

impl Tally {
    fn new() -> Self {
        Tally {
            outcome: CellOutcome {
                erroneous_bytes: 0,
                digest: FNV_OFFSET,
            },
        }
    }

    fn add(&mut self, pattern: u8, read: &[u8]) -> Result<(), RoutineError> {
        let expected = vec![pattern; read.len()];
        self.outcome.erroneous_bytes += count_erroneous_bytes(&expected, read)? as u64;
        self.outcome.digest = fnv(self.outcome.digest, read);
        Ok(())
    }
}

fn latency_plan(geometry: &DeviceGeometry, timing_values: Vec<u32>) -> ExperimentPlan {
    ExperimentPlan {
        intervals_ms: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0],
        timing_values,
        patterns: vec![0x00, 0xFF, 0xAA, 0x55],
        rows: RowSelection::bank_prefix(0, geometry.num_rows.min(512)),
        interleave_width: super::DEFAULT_INTERLEAVE_WIDTH,
        refresh: RefreshMode::Manual,
    }
}

fn manual_only(name: &str, plan: &ExperimentPlan) -> Result<(), RoutineError> {
    if plan.refresh != RefreshMode::Manual {
        return Err(RoutineError::Plan(format!(
            "the {name} experiment controls refresh itself; use manual refresh"
        )));
    }
    Ok(())
}

fn manual_backend(device: Device) -> Result<SimBackend, RoutineError> {
    let config = ManualRefresh.config(0.0, &ExecutionConfig::default())?;
    Ok(SimBackend::new(device, config)?)
}

/// Write rows, leave them unrefreshed for the interval, read them back.
pub struct Retention;

impl Experiment for Retention {
    fn name(&self) -> &'static str {
        "retention"
    }

    fn needs_timing(&self) -> bool {
        false
    }

    fn default_plan(&self, geometry: &DeviceGeometry) -> ExperimentPlan {
        ExperimentPlan {
            intervals_ms: (6..=13).map(|k| (1u32 << k) as f64).collect(),
            timing_values: vec![],
            patterns: vec![0x00, 0xFF],
            rows: RowSelection::bank_prefix(0, geometry.num_rows.min(4096)),
            interleave_width: super::DEFAULT_INTERLEAVE_WIDTH,
            refresh: RefreshMode::Manual,
        }
    }

    fn default_temperature(&self, profile: &ModuleProfile) -> f64 {
        profile.temperature_ref
    }

    fn check_plan(&self, plan: &ExperimentPlan) -> Result<(), RoutineError> {
        let strategy = plan.refresh.strategy();
        for &i in &plan.intervals_ms {
            strategy.config(i, &ExecutionConfig::default())?;
        }
        Ok(())
    }

    fn run_cell(
        &self,
        device: Device,
        plan: &ExperimentPlan,
        rows: &[RowAddr],
        cell: PlanCell,
    ) -> Result<CellOutcome, RoutineError> {
        let params = default_ddr3_params();
        let g = device.geometry();
        let strategy = plan.refresh.strategy();
        let config = strategy.config(cell.interval_ms, &ExecutionConfig::default())?;
        let mut backend = SimBackend::new(device, config)?;
        let pattern = cell.pattern;
        let mut write = |s: &mut InstructionSequence, r: RowAddr| {
            append_write_row(s, &params, r.bank, r.row, pattern)
        };
        let mut read = |s: &mut InstructionSequence, r: RowAddr| append_read_row(s, &params, r.bank, r.row);
        let write_len = block_len(g, &mut write)?;
        let span = write_len.max(block_len(g, &mut read)?);
        let pre_at = write_len - params.trp as u64 - 1;

        let row_bytes = g.row_bytes();
        let mut tally = Tally::new();
        for batch in rows.chunks(plan.interleave_width) {
            backend.execute(&pass(g, batch, span, &mut write)?)?;
            strategy.wait(&mut backend, cell.interval_ms, batch.len() as u64 * span - pre_at)?;
            let result = backend.execute(&pass(g, batch, span, &mut read)?)?;
            for chunk in result.read_bytes().chunks(row_bytes) {
                tally.add(pattern, chunk)?;
            }
        }
        Ok(tally.outcome)
    }
}

/// Per column: write with default timings, wait, read with a reduced tRCD.
pub struct TrcdReduction;

impl Experiment for TrcdReduction {
    fn name(&self) -> &'static str {
        "trcd"
    }

    fn needs_timing(&self) -> bool {
        true
    }

    fn default_plan(&self, geometry: &DeviceGeometry) -> ExperimentPlan {
        latency_plan(geometry, (3..=default_ddr3_params().trcd).collect())
    }

    fn default_temperature(&self, _profile: &ModuleProfile) -> f64 {
        LATENCY_TEST_TEMPERATURE_C
    }

    fn check_plan(&self, plan: &ExperimentPlan) -> Result<(), RoutineError> {
        manual_only(self.name(), plan)
    }

    fn run_cell(
        &self,
        device: Device,
        plan: &ExperimentPlan,
        rows: &[RowAddr],
        cell: PlanCell,
    ) -> Result<CellOutcome, RoutineError> {
        let params = default_ddr3_params();
        let trcd = cell.timing.expect("timing experiment");
        let g = device.geometry();
        let mut backend = manual_backend(device)?;
        let pattern = cell.pattern;
        let block = |col: u32| {
            let write = move |s: &mut InstructionSequence, r: RowAddr| {
                append_write_column(s, &params, r.bank, r.row, col, pattern)
            };
            let read = move |s: &mut InstructionSequence, r: RowAddr| {
                append_read_column(s, &params, r.bank, r.row, col, trcd)
            };
            (write, read)
        };
        let (mut write, mut read) = block(0);
        let write_len = block_len(g, &mut write)?;
        let span = write_len.max(block_len(g, &mut read)?);
        let pre_at = write_len - params.trp as u64 - 1;

        // Columns of one batch are finished before the next batch starts, so
        // the rest of a row is never left idle for longer than one interval.
        let mut tally = Tally::new();
        for batch in rows.chunks(plan.interleave_width) {
            for col in 0..g.num_columns {
                let (mut write, mut read) = block(col);
                backend.execute(&pass(g, batch, span, &mut write)?)?;
                ManualRefresh.wait(&mut backend, cell.interval_ms, batch.len() as u64 * span - pre_at)?;
                let result = backend.execute(&pass(g, batch, span, &mut read)?)?;
                for p in &result.payloads {
                    tally.add(pattern, &p.bytes)?;
                }
            }
        }
        Ok(tally.outcome)
    }
}

/// Write a row, wait, ACT-PRE with a reduced tRAS, wait again, read the row.
pub struct TrasReduction;

impl Experiment for TrasReduction {
    fn name(&self) -> &'static str {
        "tras"
    }

    fn needs_timing(&self) -> bool {
        true
    }

    fn default_plan(&self, geometry: &DeviceGeometry) -> ExperimentPlan {
        latency_plan(geometry, (2..=default_ddr3_params().tras).collect())
    }

    fn default_temperature(&self, _profile: &ModuleProfile) -> f64 {
        LATENCY_TEST_TEMPERATURE_C
    }

    fn check_plan(&self, plan: &ExperimentPlan) -> Result<(), RoutineError> {
        manual_only(self.name(), plan)
    }

    fn run_cell(
        &self,
        device: Device,
        plan: &ExperimentPlan,
        rows: &[RowAddr],
        cell: PlanCell,
    ) -> Result<CellOutcome, RoutineError> {
        let params: TimingParams = default_ddr3_params();
        let tras = cell.timing.expect("timing experiment");
        let g = device.geometry();
        let mut backend = manual_backend(device)?;
        let pattern = cell.pattern;
        let mut write = |s: &mut InstructionSequence, r: RowAddr| {
            append_write_row(s, &params, r.bank, r.row, pattern)
        };
        let mut restore =
            |s: &mut InstructionSequence, r: RowAddr| append_act_pre(s, &params, r.bank, r.row, tras);
        let mut read = |s: &mut InstructionSequence, r: RowAddr| append_read_row(s, &params, r.bank, r.row);
        let write_len = block_len(g, &mut write)?;
        let span = write_len
            .max(block_len(g, &mut restore)?)
            .max(block_len(g, &mut read)?);
        let write_pre_at = write_len - params.trp as u64 - 1;
        let restore_pre_at = tras as u64 + 1;
        let (t2, t3) = (cell.interval_ms, cell.interval_ms);

        let row_bytes = g.row_bytes();
        let mut tally = Tally::new();
        for batch in rows.chunks(plan.interleave_width) {
            let w = batch.len() as u64;
            backend.execute(&pass(g, batch, span, &mut write)?)?;
            ManualRefresh.wait(&mut backend, t2, w * span - write_pre_at)?;
            backend.execute(&pass(g, batch, span, &mut restore)?)?;
            ManualRefresh.wait(&mut backend, t3, w * span - restore_pre_at)?;
            let result = backend.execute(&pass(g, batch, span, &mut read)?)?;
            for chunk in result.read_bytes().chunks(row_bytes) {
                tally.add(pattern, chunk)?;
            }
        }
        Ok(tally.outcome)
    }
}

