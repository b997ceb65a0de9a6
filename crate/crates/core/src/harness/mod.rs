//! Scenario library, end-to-end experiments and result persistence.

mod config;
mod experiments;
mod scenario;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{Config, HMethodKind, RunConfig, SolverConfig, TransformConfig};
pub use experiments::*;
pub use scenario::{
    AtomConfig, GridConfig, InitialMeasure, Scenario, ScenarioConfig, ScenarioName, TestFunction, DEFAULT_INTERVAL_ATOMS,
};

/// Largest |z| a passing two-sided check may have.
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `|z| ≤ 4`.
    TwoSided,
    /// `z ≤ 4`: the estimate may not exceed the reference.
    Upper,
    /// Pass/fail decided without a single z-score.
    Qualitative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub estimate: f64,
    pub stderr: f64,
    pub reference: f64,
    pub reference_stderr: f64,
    pub z: Option<f64>,
    pub passed: bool,
    /// Reported but not part of the verdict.
    pub informational: bool,
}

impl Check {
    pub fn two_sided(name: impl Into<String>, estimate: f64, stderr: f64, reference: f64, reference_stderr: f64) -> Self {
        let z = crate::stats::z_score(estimate - reference, crate::stats::combined_stderr(stderr, reference_stderr));
        Self {
            name: name.into(),
            kind: CheckKind::TwoSided,
            estimate,
            stderr,
            reference,
            reference_stderr,
            z: Some(z),
            passed: z.abs() <= Z_THRESHOLD,
            informational: false,
        }
    }

    pub fn upper(name: impl Into<String>, estimate: f64, stderr: f64, bound: f64, bound_stderr: f64) -> Self {
        let z = crate::stats::z_score(estimate - bound, crate::stats::combined_stderr(stderr, bound_stderr));
        Self {
            name: name.into(),
            kind: CheckKind::Upper,
            estimate,
            stderr,
            reference: bound,
            reference_stderr: bound_stderr,
            z: Some(z),
            passed: z <= Z_THRESHOLD,
            informational: false,
        }
    }

    pub fn qualitative(name: impl Into<String>, estimate: f64, reference: f64, passed: bool) -> Self {
        Self {
            name: name.into(),
            kind: CheckKind::Qualitative,
            estimate,
            stderr: 0.0,
            reference,
            reference_stderr: 0.0,
            z: None,
            passed,
            informational: false,
        }
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
}

/// Summary of one experiment. Contains no wall-clock data, so it is a
/// pure function of the configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub outcome: Outcome,
    /// Set when a resource limit cut the experiment short.
    pub partial: bool,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
}

impl RunResult {
    pub fn new(experiment: &str, scenario: &str, config_hash: String, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            scenario: scenario.into(),
            config_hash,
            seed,
            outcome: Outcome::Pass,
            partial: false,
            checks: vec![],
            tables: vec![],
            notes: vec![],
        }
    }

    /// Recomputes the outcome from the non-informational checks.
    pub fn finish(mut self) -> Self {
        let ok = self.checks.iter().filter(|c| !c.informational).all(|c| c.passed);
        self.outcome = if ok && !self.partial { Outcome::Pass } else { Outcome::Fail };
        self
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `result.json` and one `table_<name>.<format>` per table.
    pub fn write(&self, dir: &Path, format: TableFormat) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("result.json"), self.to_json()?)?;
        for table in &self.tables {
            match format {
                TableFormat::Csv => {
                    let mut w = csv::Writer::from_path(dir.join(format!("table_{}.csv", table.name)))
                        .map_err(|e| Error::Io(e.to_string()))?;
                    w.write_record(&table.columns).map_err(|e| Error::Io(e.to_string()))?;
                    for row in &table.rows {
                        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| Error::Io(e.to_string()))?;
                    }
                    w.flush()?;
                }
                TableFormat::Json => {
                    std::fs::write(dir.join(format!("table_{}.json", table.name)), serde_json::to_string_pretty(table)?)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}
