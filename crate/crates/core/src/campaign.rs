//! Campaign runner: one JSON config in, one CSV per experiment plus a text
//! summary out.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{build_device, DeviceError, ModuleProfile, ProfileError};
use crate::geometry::DeviceGeometry;
use crate::routines::{find_experiment, run_experiment, ExperimentPlan, RoutineError, TestResult};

pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRequest {
    /// Registry name: `retention`, `trcd` or `tras`.
    pub name: String,
    /// Falls back to the experiment's default plan when absent.
    #[serde(default)]
    pub plan: Option<ExperimentPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub geometry: DeviceGeometry,
    /// Preset name (`A`, `B`, `C`) or path to a profile JSON file.
    pub profile: String,
    /// Falls back to each experiment's default temperature when absent.
    #[serde(default)]
    pub temperature_c: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    pub experiments: Vec<ExperimentRequest>,
    pub out_dir: PathBuf,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Routine(RoutineError),
    #[error(transparent)]
    Device(DeviceError),
}

impl CampaignError {
    /// Process exit status for this error: 2 for bad input, 3 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CampaignError::Config(_) => 2,
            CampaignError::Io { .. } => 3,
            CampaignError::Routine(_) | CampaignError::Device(_) => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<RoutineError> for CampaignError {
    fn from(e: RoutineError) -> Self {
        match e {
            RoutineError::Plan(_) | RoutineError::UnknownExperiment(_) | RoutineError::Geometry(_) => {
                CampaignError::Config(e.to_string())
            }
            other => CampaignError::Routine(other),
        }
    }
}

impl From<DeviceError> for CampaignError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::Geometry(_) | DeviceError::Profile(_) | DeviceError::Temperature(_) => {
                CampaignError::Config(e.to_string())
            }
            other => CampaignError::Device(other),
        }
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        serde_json::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CampaignError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
            .map_err(|e| CampaignError::Config(format!("{}: {}", path.display(), e)))
    }

    pub fn load_profile(&self) -> Result<ModuleProfile, CampaignError> {
        ModuleProfile::resolve(&self.profile).map_err(|e| match e {
            ProfileError::Io { path, source } => CampaignError::Io { path, source },
            other => CampaignError::Config(other.to_string()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub results: Vec<TestResult>,
    pub csv_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
}

/// Runs every requested experiment and writes `<name>.csv`, `<name>.json`
/// and `summary.txt` into the output directory.
pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    if config.experiments.is_empty() {
        return Err(CampaignError::Config("no experiments requested".into()));
    }
    if config.jobs == 0 {
        return Err(CampaignError::Config("jobs must be at least 1".into()));
    }
    config
        .geometry
        .validate()
        .map_err(|e| CampaignError::Config(e.to_string()))?;
    let profile = config.load_profile()?;
    profile
        .validate()
        .map_err(|e| CampaignError::Config(e.to_string()))?;

    // Check every request before spending time on any of them.
    let mut jobs = Vec::new();
    for req in &config.experiments {
        let exp = find_experiment(&req.name)?;
        let plan = req
            .plan
            .clone()
            .unwrap_or_else(|| exp.default_plan(&config.geometry));
        plan.validate(exp.needs_timing())?;
        exp.check_plan(&plan)?;
        plan.rows.resolve(&config.geometry)?;
        let temperature = config
            .temperature_c
            .unwrap_or_else(|| exp.default_temperature(&profile));
        jobs.push((exp, plan, temperature));
    }

    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let mut results = Vec::new();
    let mut csv_files = Vec::new();
    for (exp, plan, temperature) in jobs {
        let device = build_device(config.geometry, profile.clone(), temperature, config.seed)?;
        let result = run_experiment(exp, &device, &plan, config.jobs)?;
        let csv = config.out_dir.join(format!("{}.csv", exp.name()));
        fs::write(&csv, result.to_csv()).map_err(io_err(&csv))?;
        let json = config.out_dir.join(format!("{}.json", exp.name()));
        let body = serde_json::to_string_pretty(&result).expect("results serialize");
        fs::write(&json, body).map_err(io_err(&json))?;
        csv_files.push(csv);
        results.push(result);
    }
    let summary_file = config.out_dir.join(SUMMARY_FILE);
    fs::write(&summary_file, summarize(&results)).map_err(io_err(&summary_file))?;
    Ok(CampaignReport {
        results,
        csv_files,
        summary_file,
    })
}

/// Largest interval such that it and every shorter one saw no errors.
pub fn largest_zero_error_interval(result: &TestResult, timing: Option<u32>) -> Option<f64> {
    result
        .intervals()
        .into_iter()
        .take_while(|&i| result.total(timing, i) == 0)
        .last()
}

/// Smallest tested timing value from which every larger value reads back
/// exactly what the largest (default) value does.
pub fn smallest_error_free_timing(result: &TestResult) -> Option<u32> {
    let timings: Vec<u32> = result.timings().into_iter().flatten().collect();
    let reference = *timings.last()?;
    timings
        .iter()
        .rev()
        .take_while(|&&t| result.identical(Some(t), Some(reference)))
        .last()
        .copied()
}

fn timing_label(experiment: &str) -> &'static str {
    match experiment {
        "trcd" => "tRCD",
        "tras" => "tRAS",
        _ => "timing",
    }
}

fn ms(v: Option<f64>) -> String {
    v.map(|i| format!("{i} ms")).unwrap_or_else(|| "none".into())
}

pub fn summarize(results: &[TestResult]) -> String {
    let mut out = String::new();
    for r in results {
        let _ = writeln!(
            out,
            "[{}] profile={} temperature_c={} rows={} bytes_per_entry={}",
            r.experiment, r.profile, r.temperature_c, r.rows_tested, r.bytes_per_entry
        );
        let timings = r.timings();
        let label = timing_label(&r.experiment);
        out.push_str("erroneous bytes per interval (summed over patterns)\n");
        for &t in &timings {
            let prefix = t.map(|t| format!("  {label}={t}:")).unwrap_or_else(|| "  ".into());
            out.push_str(&prefix);
            for i in r.intervals() {
                let _ = write!(out, " {i}ms={}", r.total(t, i));
            }
            out.push('\n');
        }
        match timings.as_slice() {
            [None] => {
                let _ = writeln!(
                    out,
                    "largest zero-error interval: {}",
                    ms(largest_zero_error_interval(r, None))
                );
            }
            _ => {
                for &t in &timings {
                    let _ = writeln!(
                        out,
                        "largest zero-error interval at {label}={}: {}",
                        t.unwrap_or_default(),
                        ms(largest_zero_error_interval(r, t))
                    );
                }
                let smallest = smallest_error_free_timing(r)
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "none".into());
                let _ = writeln!(out, "smallest error-free {label}: {smallest}");
            }
        }
        out.push('\n');
    }
    out
}
