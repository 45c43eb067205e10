//! Versioned JSON reports and CSV plot data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Version of the report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// One checked quantity: pass iff `value ≤ bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Descriptive name of the statement the check traces to.
    pub anchor: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Check {
    /// Pass iff `value ≤ bound` and both are comparable.
    pub fn le(name: impl Into<String>, anchor: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            anchor: anchor.into(),
            value,
            bound,
            pass: value <= bound,
            seed: None,
        }
    }

    /// Pass iff `value ≥ bound`.
    pub fn ge(name: impl Into<String>, anchor: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            pass: value >= bound,
            ..Self::le(name, anchor, value, bound)
        }
    }

    /// Pass iff `value > bound`.
    pub fn gt(name: impl Into<String>, anchor: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            pass: value > bound,
            ..Self::le(name, anchor, value, bound)
        }
    }

    /// Pass iff `lo ≤ value ≤ hi`; `bound` records `hi`.
    pub fn within(name: impl Into<String>, anchor: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            pass: value >= lo && value <= hi,
            ..Self::le(name, anchor, value, hi)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// A run-ending error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Result of one scenario stage over its seed ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub scenario: String,
    pub stage: String,
    pub seeds: Vec<u64>,
    /// The scenario as run.
    pub config: serde_json::Value,
    pub checks: Vec<Check>,
    /// Stage-specific evidence per seed.
    pub artifacts: Vec<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ErrorRecord>,
    /// Whether the run matched an expected rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_rejection: Option<bool>,
    pub pass: bool,
    pub exit_code: i32,
    pub runtime_ms: u64,
}

impl Report {
    /// Failing check names.
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Output(e.to_string()))
    }

    /// Checks as CSV rows.
    pub fn checks_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "stage", "seed", "name", "anchor", "value", "bound", "pass"])
            .map_err(|e| CliError::Output(e.to_string()))?;
        for c in &self.checks {
            let seed = c.seed.map(|s| s.to_string()).unwrap_or_default();
            w.write_record([
                self.scenario.as_str(),
                self.stage.as_str(),
                seed.as_str(),
                c.name.as_str(),
                c.anchor.as_str(),
                &c.value.to_string(),
                &c.bound.to_string(),
                if c.pass { "true" } else { "false" },
            ])
            .map_err(|e| CliError::Output(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
    }
}

/// Rows of a time series: one `t` column and named value columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        w.write_record(&self.columns).map_err(|e| CliError::Output(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| CliError::Output(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(path.display().to_string(), e))
    }
}

/// Write `text` to `dir/name`, creating `dir`.
pub fn write_file(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path.display().to_string(), e))
}
