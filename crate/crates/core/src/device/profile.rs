use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timing::default_ddr3_params;

/// Environment variable naming a directory searched for `profile_<NAME>.json`
/// before the built-in presets.
pub const PROFILE_DIR_ENV: &str = "SOFTMC_SIM_PROFILE_DIR";

const PRESETS: [(&str, &str); 3] = [
    ("A", include_str!("../../profiles/profile_A.json")),
    ("B", include_str!("../../profiles/profile_B.json")),
    ("C", include_str!("../../profiles/profile_C.json")),
];

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile `{0}` is neither a preset nor a readable file")]
    NotFound(String),
    #[error("reading profile {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing profile {origin}: {source}")]
    Parse {
        origin: String,
        source: serde_json::Error,
    },
    #[error("profile `{name}`: {message}")]
    Invalid { name: String, message: String },
}

/// Behavioral parameters of one vendor's module.
///
/// Retention times are lognormal in milliseconds at `temperature_ref`: a
/// strong bulk population plus a `weak_cell_fraction` of weak cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleProfile {
    pub name: String,
    /// Smallest tRCD (cycles) at which reads sense correctly regardless of charge.
    pub min_safe_trcd: u32,
    /// Smallest tRAS (cycles) that fully restores a row.
    pub min_safe_tras: u32,
    /// Charge fraction a cell needs to sense correctly at tRCD = min_safe_trcd - 1.
    pub marginal_charge_threshold: f64,
    pub retention_log_mean: f64,
    pub retention_log_sd: f64,
    pub weak_cell_fraction: f64,
    pub weak_retention_log_mean: f64,
    pub weak_retention_log_sd: f64,
    pub temperature_ref: f64,
    /// Temperature rise (deg C) that halves retention time.
    pub retention_halving_per: f64,
    pub true_cell_layout_seed: u64,
}

impl ModuleProfile {
    pub fn preset(name: &str) -> Option<Self> {
        let key = preset_key(name);
        PRESETS
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, json)| serde_json::from_str(json).expect("built-in profile parses"))
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ProfileError> {
        let profile: Self = serde_json::from_str(text).map_err(|source| ProfileError::Parse {
            origin: origin.to_string(),
            source,
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn from_file(path: &Path) -> Result<Self, ProfileError> {
        let text = fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Resolves a preset name or a file path. A directory in
    /// `SOFTMC_SIM_PROFILE_DIR` takes precedence over the built-in presets.
    pub fn resolve(name_or_path: &str) -> Result<Self, ProfileError> {
        if let Some(dir) = env::var_os(PROFILE_DIR_ENV) {
            let candidate = Path::new(&dir).join(format!("profile_{}.json", preset_key(name_or_path)));
            if candidate.is_file() {
                return Self::from_file(&candidate);
            }
        }
        if let Some(p) = Self::preset(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::from_file(path);
        }
        Err(ProfileError::NotFound(name_or_path.to_string()))
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let defaults = default_ddr3_params();
        let fail = |message: String| {
            Err(ProfileError::Invalid {
                name: self.name.clone(),
                message,
            })
        };
        if !(1..=defaults.trcd).contains(&self.min_safe_trcd) {
            return fail(format!(
                "min_safe_trcd {} outside 1..={}",
                self.min_safe_trcd, defaults.trcd
            ));
        }
        if !(1..=defaults.tras).contains(&self.min_safe_tras) {
            return fail(format!(
                "min_safe_tras {} outside 1..={}",
                self.min_safe_tras, defaults.tras
            ));
        }
        for (field, v) in [
            ("marginal_charge_threshold", self.marginal_charge_threshold),
            ("weak_cell_fraction", self.weak_cell_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{field} {v} outside [0, 1]"));
            }
        }
        for (field, v) in [
            ("retention_log_sd", self.retention_log_sd),
            ("weak_retention_log_sd", self.weak_retention_log_sd),
            ("retention_halving_per", self.retention_halving_per),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{field} must be positive"));
            }
        }
        for (field, v) in [
            ("retention_log_mean", self.retention_log_mean),
            ("weak_retention_log_mean", self.weak_retention_log_mean),
            ("temperature_ref", self.temperature_ref),
        ] {
            if !v.is_finite() {
                return fail(format!("{field} must be finite"));
            }
        }
        Ok(())
    }

    /// Multiplier on reference retention time at `temperature_c`.
    pub fn retention_scale(&self, temperature_c: f64) -> f64 {
        ((self.temperature_ref - temperature_c) / self.retention_halving_per).exp2()
    }
}

fn preset_key(name: &str) -> String {
    let trimmed = name.trim();
    let trimmed = trimmed.strip_suffix(".json").unwrap_or(trimmed);
    let trimmed = trimmed.strip_prefix("profile_").unwrap_or(trimmed);
    trimmed.to_ascii_uppercase()
}
