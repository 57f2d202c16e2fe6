use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "osculate/1";

/// One verification check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    /// What was checked (handle label, field pair, point, ...).
    pub subject: String,
    pub pass: bool,
    pub residual: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub detail: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Check {
    pub fn new(name: &str, subject: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.to_string(),
            subject: subject.into(),
            pass,
            residual: None,
            tolerance: None,
            detail: Value::Null,
            error: None,
        }
    }

    /// A check whose computation failed.
    pub fn failed(name: &str, subject: impl Into<String>, err: &osculate::Error) -> Self {
        Self {
            error: Some(err.to_string()),
            ..Self::new(name, subject, false)
        }
    }

    pub fn residual(mut self, residual: f64, tolerance: f64) -> Self {
        self.residual = Some(residual);
        self.tolerance = Some(tolerance);
        self
    }

    /// A residual with no fixed tolerance (the pass rule is structural).
    pub fn value(mut self, residual: f64) -> Self {
        self.residual = Some(residual);
        self
    }

    pub fn detail(mut self, detail: impl Serialize) -> Self {
        self.detail = serde_json::to_value(detail).unwrap_or(Value::Null);
        self
    }
}

/// A residual series on a t-grid, for CSV export.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub t_grid: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ratios: Option<Vec<f64>>,
}

/// Top-level JSON report.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub geometry: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
    pub pass: bool,
    pub result: Value,
}

impl Report {
    pub fn new(command: &str, geometry: &str, seed: u64, pass: bool, result: Value) -> Self {
        Self {
            schema: SCHEMA,
            command: command.to_string(),
            geometry: geometry.to_string(),
            seed,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            pass,
            result,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values serialize");
        s.push('\n');
        s
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `series,t,residual,ratio` rows.
pub fn write_csv(path: &Path, series: &[Series]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "t", "residual", "ratio"])?;
    for s in series {
        for (i, (t, r)) in s.t_grid.iter().zip(&s.residuals).enumerate() {
            let ratio = s.ratios.as_ref().map(|q| q[i].to_string()).unwrap_or_default();
            w.write_record([s.label.clone(), t.to_string(), r.to_string(), ratio])?;
        }
    }
    w.flush().map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}
