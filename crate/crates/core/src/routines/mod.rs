//! The three characterization experiments as library routines.
//!
//! Each experiment implements [`Experiment`] and is looked up by name in a
//! small registry. A plan expands into cells, one per (timing value,
//! interval, pattern); every cell runs on a fresh device that shares the
//! seeded cell array, so cells are independent and can run in parallel.

mod experiments;
mod plan;
mod result;

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::BackendError;
use crate::device::{Device, DeviceError, ModuleProfile};
use crate::geometry::{DeviceGeometry, GeometryError};
use crate::isa::IsaError;

pub use experiments::{Retention, TrasReduction, TrcdReduction};
pub use plan::{
    AutoRefresh, ExperimentPlan, ManualRefresh, RefreshMode, RefreshStrategy, RowAddr,
    RowSelection, DEFAULT_INTERLEAVE_WIDTH,
};
pub use result::{TestEntry, TestResult, CSV_HEADER};

#[derive(Debug, Error)]
pub enum RoutineError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanCell {
    pub timing: Option<u32>,
    pub interval_ms: f64,
    pub pattern: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellOutcome {
    pub erroneous_bytes: u64,
    pub digest: u64,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether plans carry timing values (tRCD or tRAS cycles).
    fn needs_timing(&self) -> bool;

    fn default_plan(&self, geometry: &DeviceGeometry) -> ExperimentPlan;

    fn default_temperature(&self, profile: &ModuleProfile) -> f64;

    /// Experiment-specific plan checks beyond [`ExperimentPlan::validate`].
    fn check_plan(&self, _plan: &ExperimentPlan) -> Result<(), RoutineError> {
        Ok(())
    }

    fn run_cell(
        &self,
        device: Device,
        plan: &ExperimentPlan,
        rows: &[RowAddr],
        cell: PlanCell,
    ) -> Result<CellOutcome, RoutineError>;
}

static REGISTRY: [&dyn Experiment; 3] = [&Retention, &TrcdReduction, &TrasReduction];

pub fn experiments() -> &'static [&'static dyn Experiment] {
    &REGISTRY
}

pub fn find_experiment(name: &str) -> Result<&'static dyn Experiment, RoutineError> {
    REGISTRY
        .iter()
        .copied()
        .find(|e| e.name() == name)
        .ok_or_else(|| RoutineError::UnknownExperiment(name.to_string()))
}

fn sorted_unique<T: Copy>(values: &[T], cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(&cmp);
    v.dedup_by(|a, b| cmp(a, b).is_eq());
    v
}

/// Expands a plan into its cells in CSV order.
pub fn plan_cells(exp: &dyn Experiment, plan: &ExperimentPlan) -> Vec<PlanCell> {
    let timings: Vec<Option<u32>> = if exp.needs_timing() {
        sorted_unique(&plan.timing_values, u32::cmp)
            .into_iter()
            .map(Some)
            .collect()
    } else {
        vec![None]
    };
    let intervals = sorted_unique(&plan.intervals_ms, f64::total_cmp);
    let patterns = sorted_unique(&plan.patterns, u8::cmp);
    let mut cells = Vec::with_capacity(timings.len() * intervals.len() * patterns.len());
    for &timing in &timings {
        for &interval_ms in &intervals {
            for &pattern in &patterns {
                cells.push(PlanCell {
                    timing,
                    interval_ms,
                    pattern,
                });
            }
        }
    }
    cells
}

/// Runs every cell of `plan` on fresh copies of `device`, using up to `jobs`
/// worker threads. The result does not depend on `jobs`.
pub fn run_experiment(
    exp: &dyn Experiment,
    device: &Device,
    plan: &ExperimentPlan,
    jobs: usize,
) -> Result<TestResult, RoutineError> {
    plan.validate(exp.needs_timing())?;
    exp.check_plan(plan)?;
    let geometry = device.geometry();
    let rows = plan.rows.resolve(&geometry)?;
    let cells = plan_cells(exp, plan);
    let run = |cell: &PlanCell| {
        exp.run_cell(device.fresh(), plan, &rows, *cell)
            .map(|o| TestEntry {
                timing_cycles: cell.timing,
                interval_ms: cell.interval_ms,
                pattern: cell.pattern,
                erroneous_bytes: o.erroneous_bytes,
                digest: o.digest,
            })
    };
    let entries: Result<Vec<TestEntry>, RoutineError> = if jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| RoutineError::Pool(e.to_string()))?
            .install(|| cells.par_iter().map(run).collect())
    };
    let mut result = TestResult {
        experiment: exp.name().to_string(),
        profile: device.profile().name.clone(),
        temperature_c: device.temperature_c(),
        rows_tested: rows.len(),
        bytes_per_entry: rows.len() as u64 * geometry.row_bytes() as u64,
        entries: entries?,
    };
    result.sort();
    Ok(result)
}

pub fn retention_test(device: &Device, plan: &ExperimentPlan) -> Result<TestResult, RoutineError> {
    run_experiment(&Retention, device, plan, 1)
}

pub fn trcd_test(device: &Device, plan: &ExperimentPlan) -> Result<TestResult, RoutineError> {
    run_experiment(&TrcdReduction, device, plan, 1)
}

pub fn tras_test(device: &Device, plan: &ExperimentPlan) -> Result<TestResult, RoutineError> {
    run_experiment(&TrasReduction, device, plan, 1)
}
