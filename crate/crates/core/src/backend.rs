//! Execution of instruction sequences against a device.
//!
//! [`Backend`] is the port a host-side test routine talks to. [`SimBackend`]
//! drives the behavioral [`Device`] on a simulated picosecond clock; a
//! hardware transport would implement the same trait.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Device, DeviceError, IssueContext, ProtocolFault, PS_PER_MS};
use crate::geometry::DeviceGeometry;
use crate::isa::{Instruction, InstructionSequence, IsaError};
use crate::timing::{
    default_ddr3_params, lower_sequence, CommandTrace, TimingError, TraceEntry,
    DEFAULT_CLOCK_PERIOD_NS,
};

/// Above this many REFs in one advance, refresh is applied in closed form.
const STEPWISE_REF_LIMIT: u64 = 64;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("sequence is not sealed with END")]
    Unsealed,
    #[error("sequence geometry {found:?} does not match device geometry {expected:?}")]
    GeometryMismatch {
        expected: DeviceGeometry,
        found: DeviceGeometry,
    },
    #[error("invalid execution config: {0}")]
    Config(String),
    #[error("invalid duration {0} ms")]
    Duration(f64),
    #[error(transparent)]
    Sequence(#[from] IsaError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub clock_period_ns: f64,
    pub auto_refresh: bool,
    /// Cycles between consecutive REFs when `auto_refresh` is on.
    pub trefi_cycles: u32,
    /// Cycles user commands are held off after an injected REF.
    pub trfc_cycles: u32,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        let t = default_ddr3_params();
        ExecutionConfig {
            clock_period_ns: DEFAULT_CLOCK_PERIOD_NS,
            auto_refresh: false,
            trefi_cycles: t.trefi,
            trfc_cycles: t.trfc,
        }
    }
}

impl ExecutionConfig {
    pub fn clock_period_ps(&self) -> u64 {
        (self.clock_period_ns * 1000.0).round() as u64
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.clock_period_ns.is_finite() && self.clock_period_ps() > 0) {
            return Err(BackendError::Config(format!(
                "clock_period_ns must be positive, got {}",
                self.clock_period_ns
            )));
        }
        if self.auto_refresh && self.trefi_cycles == 0 {
            return Err(BackendError::Config(
                "trefi_cycles must be positive with auto-refresh".into(),
            ));
        }
        if self.auto_refresh && self.trfc_cycles as u64 + 1 >= self.trefi_cycles as u64 {
            return Err(BackendError::Config(format!(
                "tRFC ({}) leaves no command slots within tREFI ({})",
                self.trfc_cycles, self.trefi_cycles
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadPayload {
    pub bank: u8,
    pub col: u16,
    #[serde(with = "hex")]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FaultRecord {
    pub cycle: u64,
    pub command: String,
    pub fault: ProtocolFault,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionResult {
    pub payloads: Vec<ReadPayload>,
    /// Cycles from the start of execution to END, including refresh stalls.
    pub final_cycle: u64,
    pub faults: Vec<FaultRecord>,
    /// REFs injected by auto-refresh while the sequence ran.
    pub refreshes: u64,
    /// Commands as issued, cycles relative to the start of execution.
    pub issued: CommandTrace,
}

impl ExecutionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// All payload bytes concatenated in program order.
    pub fn read_bytes(&self) -> Vec<u8> {
        self.payloads.iter().flat_map(|p| p.bytes.iter().copied()).collect()
    }
}

pub trait Backend {
    fn geometry(&self) -> DeviceGeometry;

    fn clock_period_ps(&self) -> u64;

    fn now_ps(&self) -> u64;

    /// Runs a sealed sequence to its END.
    fn execute(&mut self, seq: &InstructionSequence) -> Result<ExecutionResult, BackendError>;

    /// Lets simulated time pass without issuing user commands.
    fn advance_ps(&mut self, duration_ps: u64) -> Result<(), BackendError>;

    fn advance_time(&mut self, duration_ms: f64) -> Result<(), BackendError> {
        if !(duration_ms.is_finite() && duration_ms >= 0.0) {
            return Err(BackendError::Duration(duration_ms));
        }
        self.advance_ps((duration_ms * PS_PER_MS as f64).round() as u64)
    }
}

#[derive(Debug, Clone)]
pub struct SimBackend {
    device: Device,
    config: ExecutionConfig,
    clock_ps: u64,
    next_ref_ps: u64,
    busy_until_ps: u64,
}

impl SimBackend {
    pub fn new(device: Device, config: ExecutionConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let clock_ps = config.clock_period_ps();
        let next_ref_ps = device.now_ps() + config.trefi_cycles as u64 * clock_ps;
        Ok(SimBackend {
            device,
            config,
            clock_ps,
            next_ref_ps,
            busy_until_ps: 0,
        })
    }

    pub fn config(&self) -> &ExecutionConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.device
    }

    pub fn into_device(self) -> Device {
        self.device
    }

    fn refresh_period_ps(&self) -> u64 {
        self.config.trefi_cycles as u64 * self.clock_ps
    }

    fn issue_ref(&mut self, at_ps: u64) -> Result<(), BackendError> {
        self.device.set_time_ps(at_ps)?;
        self.device.step_command(&Instruction::Ref, IssueContext::default())?;
        self.busy_until_ps = at_ps + (1 + self.config.trfc_cycles as u64) * self.clock_ps;
        self.next_ref_ps += self.refresh_period_ps();
        Ok(())
    }
}

fn gap(earlier: Option<u64>, later: u64) -> Option<u64> {
    earlier.map(|e| later.saturating_sub(e + 1))
}

impl Backend for SimBackend {
    fn geometry(&self) -> DeviceGeometry {
        self.device.geometry()
    }

    fn clock_period_ps(&self) -> u64 {
        self.clock_ps
    }

    fn now_ps(&self) -> u64 {
        self.device.now_ps()
    }

    fn execute(&mut self, seq: &InstructionSequence) -> Result<ExecutionResult, BackendError> {
        if !seq.is_sealed() {
            return Err(BackendError::Unsealed);
        }
        if *seq.geometry() != self.geometry() {
            return Err(BackendError::GeometryMismatch {
                expected: self.geometry(),
                found: *seq.geometry(),
            });
        }
        let trace = lower_sequence(seq)?;
        let start = self.device.now_ps();
        let clk = self.clock_ps;
        let auto = self.config.auto_refresh;
        let mut delay = 0u64;
        let mut last_act = vec![None; self.geometry().num_banks as usize];
        let mut payloads = Vec::new();
        let mut faults = Vec::new();
        let mut issued = Vec::with_capacity(trace.len());
        let mut refreshes = 0;

        for entry in &trace.entries {
            let mut cycle = entry.cycle + delay;
            loop {
                let at = start + cycle * clk;
                if auto && self.next_ref_ps <= at {
                    let t = self.next_ref_ps;
                    self.issue_ref(t)?;
                    refreshes += 1;
                    issued.push(TraceEntry {
                        cycle: (t - start).div_ceil(clk),
                        cmd: Instruction::Ref,
                    });
                    continue;
                }
                if self.busy_until_ps > at {
                    delay += (self.busy_until_ps - at).div_ceil(clk);
                    cycle = entry.cycle + delay;
                    continue;
                }
                break;
            }
            self.device.set_time_ps(start + cycle * clk)?;
            let mut ctx = IssueContext::default();
            match entry.cmd {
                Instruction::Act { bank, .. } => last_act[bank as usize] = Some(cycle),
                Instruction::Rd { bank, .. } => ctx.trcd_used = gap(last_act[bank as usize], cycle),
                Instruction::Pre { bank } => ctx.tras_used = gap(last_act[bank as usize], cycle),
                _ => {}
            }
            let outcome = self.device.step_command(&entry.cmd, ctx)?;
            if let Instruction::Ref = entry.cmd {
                self.busy_until_ps =
                    start + (cycle + 1 + self.config.trfc_cycles as u64) * clk;
            }
            if let Some(fault) = outcome.fault {
                faults.push(FaultRecord {
                    cycle,
                    command: entry.cmd.to_string(),
                    fault,
                });
            }
            if let (Instruction::Rd { bank, col }, Some(bytes)) = (entry.cmd, outcome.data) {
                payloads.push(ReadPayload { bank, col, bytes });
            }
            issued.push(TraceEntry {
                cycle,
                cmd: entry.cmd,
            });
        }

        let final_cycle = trace.end_cycle.expect("lowered sealed sequence") + delay;
        let end = start + final_cycle * clk;
        while auto && self.next_ref_ps < end {
            let t = self.next_ref_ps;
            self.issue_ref(t)?;
            refreshes += 1;
            issued.push(TraceEntry {
                cycle: (t - start).div_ceil(clk),
                cmd: Instruction::Ref,
            });
        }
        self.device.set_time_ps(end)?;
        Ok(ExecutionResult {
            payloads,
            final_cycle,
            faults,
            refreshes,
            issued: CommandTrace {
                entries: issued,
                end_cycle: Some(final_cycle),
            },
        })
    }

    fn advance_ps(&mut self, duration_ps: u64) -> Result<(), BackendError> {
        let end = self.device.now_ps() + duration_ps;
        if self.config.auto_refresh && self.next_ref_ps < end {
            let period = self.refresh_period_ps();
            let count = (end - 1 - self.next_ref_ps) / period + 1;
            if count <= STEPWISE_REF_LIMIT {
                for _ in 0..count {
                    let t = self.next_ref_ps;
                    self.issue_ref(t)?;
                }
            } else {
                let first = self.next_ref_ps;
                self.device.apply_periodic_refresh(first, period, count);
                let last = first + (count - 1) * period;
                self.busy_until_ps = last + (1 + self.config.trfc_cycles as u64) * self.clock_ps;
                self.next_ref_ps = last + period;
            }
        }
        self.device.set_time_ps(end)?;
        Ok(())
    }
}
