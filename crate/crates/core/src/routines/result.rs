use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    pub timing_cycles: Option<u32>,
    pub interval_ms: f64,
    pub pattern: u8,
    pub erroneous_bytes: u64,
    /// Hash of every byte read back for this entry; equal digests mean
    /// bit-identical outcomes.
    #[serde(skip)]
    pub digest: u64,
}

impl TestEntry {
    fn key(&self) -> (Option<u32>, u64, u8) {
        (self.timing_cycles, self.interval_ms.to_bits(), self.pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub experiment: String,
    pub profile: String,
    pub temperature_c: f64,
    pub rows_tested: usize,
    /// Bytes read back per entry; the ceiling for `erroneous_bytes`.
    pub bytes_per_entry: u64,
    pub entries: Vec<TestEntry>,
}

pub const CSV_HEADER: &str =
    "experiment,profile,temperature_c,timing_cycles,interval_ms,pattern,erroneous_bytes";

impl TestResult {
    /// Sorts entries by (timing, interval, pattern).
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            a.timing_cycles
                .cmp(&b.timing_cycles)
                .then(a.interval_ms.total_cmp(&b.interval_ms))
                .then(a.pattern.cmp(&b.pattern))
        });
    }

    pub fn entry(&self, timing: Option<u32>, interval_ms: f64, pattern: u8) -> Option<&TestEntry> {
        self.entries
            .iter()
            .find(|e| e.key() == (timing, interval_ms.to_bits(), pattern))
    }

    /// Total erroneous bytes over patterns for one (timing, interval).
    pub fn total(&self, timing: Option<u32>, interval_ms: f64) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.timing_cycles == timing && e.interval_ms == interval_ms)
            .map(|e| e.erroneous_bytes)
            .sum()
    }

    pub fn intervals(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.entries.iter().map(|e| e.interval_ms).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn timings(&self) -> Vec<Option<u32>> {
        let mut v: Vec<Option<u32>> = self.entries.iter().map(|e| e.timing_cycles).collect();
        v.sort();
        v.dedup();
        v
    }

    /// True when the two timing values produced bit-identical reads for every
    /// interval and pattern.
    pub fn identical(&self, a: Option<u32>, b: Option<u32>) -> bool {
        let pick = |t| {
            let mut v: Vec<_> = self
                .entries
                .iter()
                .filter(|e| e.timing_cycles == t)
                .map(|e| (e.interval_ms.to_bits(), e.pattern, e.erroneous_bytes, e.digest))
                .collect();
            v.sort();
            v
        };
        let (x, y) = (pick(a), pick(b));
        !x.is_empty() && x == y
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.entries.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let timing = e.timing_cycles.map(|t| t.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{:#04X},{}",
                self.experiment,
                self.profile,
                self.temperature_c,
                timing,
                e.interval_ms,
                e.pattern,
                e.erroneous_bytes
            )
            .expect("writing to a String");
        }
        out
    }
}
