use serde::{Deserialize, Serialize};

use super::RoutineError;
use crate::backend::{Backend, BackendError, ExecutionConfig};
use crate::device::REFRESH_SLOTS;
use crate::geometry::DeviceGeometry;

pub const DEFAULT_INTERLEAVE_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowAddr {
    pub bank: u32,
    pub row: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RowSelection {
    /// `count` consecutive rows of one bank starting at `start`.
    Range { bank: u32, start: u32, count: u32 },
    /// Every row of every bank.
    All,
    Explicit { rows: Vec<RowAddr> },
}

impl RowSelection {
    pub fn bank_prefix(bank: u32, count: u32) -> Self {
        RowSelection::Range {
            bank,
            start: 0,
            count,
        }
    }

    pub fn resolve(&self, geometry: &DeviceGeometry) -> Result<Vec<RowAddr>, RoutineError> {
        let rows: Vec<RowAddr> = match self {
            RowSelection::Range { bank, start, count } => {
                let end = start.checked_add(*count).ok_or_else(|| {
                    RoutineError::Plan(format!("row range {start}+{count} overflows"))
                })?;
                (*start..end).map(|row| RowAddr { bank: *bank, row }).collect()
            }
            RowSelection::All => (0..geometry.num_banks)
                .flat_map(|bank| (0..geometry.num_rows).map(move |row| RowAddr { bank, row }))
                .collect(),
            RowSelection::Explicit { rows } => rows.clone(),
        };
        if rows.is_empty() {
            return Err(RoutineError::Plan("row selection is empty".into()));
        }
        for r in &rows {
            geometry.check_bank(r.bank)?;
            geometry.check_row(r.row)?;
        }
        let mut sorted = rows.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(RoutineError::Plan("row selection lists a row twice".into()));
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshMode {
    /// Auto-refresh off; the routine waits out the interval itself.
    #[default]
    Manual,
    /// Auto-refresh on with tREFI chosen so each row's refresh period equals the interval.
    Auto,
}

impl RefreshMode {
    pub fn strategy(self) -> &'static dyn RefreshStrategy {
        match self {
            RefreshMode::Manual => &ManualRefresh,
            RefreshMode::Auto => &AutoRefresh,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [RefreshMode::Manual, RefreshMode::Auto]
            .into_iter()
            .find(|m| m.strategy().name() == name)
    }
}

/// How a retention trial keeps rows unrefreshed for one interval.
pub trait RefreshStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn config(&self, interval_ms: f64, base: &ExecutionConfig) -> Result<ExecutionConfig, RoutineError>;

    /// Waits between the write and read passes. `spent_cycles` is the time
    /// already elapsed since the first row's restore.
    fn wait(
        &self,
        backend: &mut dyn Backend,
        interval_ms: f64,
        spent_cycles: u64,
    ) -> Result<(), BackendError>;
}

pub(crate) fn ms_to_ps(ms: f64) -> u64 {
    (ms * crate::device::PS_PER_MS as f64).round() as u64
}

pub struct ManualRefresh;

impl RefreshStrategy for ManualRefresh {
    fn name(&self) -> &'static str {
        "manual"
    }

    fn config(&self, _interval_ms: f64, base: &ExecutionConfig) -> Result<ExecutionConfig, RoutineError> {
        Ok(ExecutionConfig {
            auto_refresh: false,
            ..*base
        })
    }

    fn wait(
        &self,
        backend: &mut dyn Backend,
        interval_ms: f64,
        spent_cycles: u64,
    ) -> Result<(), BackendError> {
        let spent = spent_cycles * backend.clock_period_ps();
        backend.advance_ps(ms_to_ps(interval_ms).saturating_sub(spent))
    }
}

pub struct AutoRefresh;

impl RefreshStrategy for AutoRefresh {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn config(&self, interval_ms: f64, base: &ExecutionConfig) -> Result<ExecutionConfig, RoutineError> {
        let period = ms_to_ps(interval_ms);
        let per_ref = base.clock_period_ps() * REFRESH_SLOTS as u64;
        if period == 0 || !period.is_multiple_of(per_ref) {
            return Err(RoutineError::Plan(format!(
                "interval {interval_ms} ms is not a whole number of tREFI cycles across {REFRESH_SLOTS} refreshes"
            )));
        }
        let trefi = u32::try_from(period / per_ref)
            .map_err(|_| RoutineError::Plan(format!("interval {interval_ms} ms too long")))?;
        let config = ExecutionConfig {
            auto_refresh: true,
            trefi_cycles: trefi,
            ..*base
        };
        config.validate().map_err(|e| RoutineError::Plan(e.to_string()))?;
        Ok(config)
    }

    fn wait(
        &self,
        backend: &mut dyn Backend,
        interval_ms: f64,
        _spent_cycles: u64,
    ) -> Result<(), BackendError> {
        // Two periods guarantee every row sees one full refresh period.
        backend.advance_ps(2 * ms_to_ps(interval_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub intervals_ms: Vec<f64>,
    #[serde(default)]
    pub timing_values: Vec<u32>,
    pub patterns: Vec<u8>,
    pub rows: RowSelection,
    #[serde(default = "default_width")]
    pub interleave_width: usize,
    #[serde(default)]
    pub refresh: RefreshMode,
}

fn default_width() -> usize {
    DEFAULT_INTERLEAVE_WIDTH
}

impl ExperimentPlan {
    pub fn validate(&self, needs_timing: bool) -> Result<(), RoutineError> {
        let fail = |m: &str| Err(RoutineError::Plan(m.to_string()));
        if self.intervals_ms.is_empty() {
            return fail("no intervals");
        }
        if self.intervals_ms.iter().any(|&i| !(i.is_finite() && i > 0.0)) {
            return fail("intervals must be positive milliseconds");
        }
        if self.patterns.is_empty() {
            return fail("no patterns");
        }
        if needs_timing && self.timing_values.is_empty() {
            return fail("no timing values");
        }
        if self.interleave_width == 0 {
            return fail("interleave width must be at least 1");
        }
        Ok(())
    }
}
