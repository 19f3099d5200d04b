use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::BatteryConfig;
use crate::error::{Error, Result};
use crate::metrics::{NormMode, ScoreSummary};

/// Bumped whenever a report field changes meaning or layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "bug,method,metric,mean,sem,n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One (bug, method, metric) score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub bug: String,
    pub method: String,
    pub metric: String,
    pub status: CellStatus,
    pub summary: Option<ScoreSummary>,
    /// Inputs whose score was undefined (e.g. a constant map under rank
    /// correlation) and left out of the summary.
    pub undefined: usize,
    pub reason: Option<String>,
}

impl Cell {
    pub fn mean(&self) -> Option<f64> {
        self.summary.as_ref().map(|s| s.mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePoint {
    pub depth: usize,
    pub reinitialized: Vec<usize>,
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

/// Similarity of each cascade stage's maps to the stage-0 maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeCurve {
    pub method: String,
    pub metric: String,
    pub stages: Vec<StagePoint>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub schema_version: u32,
    pub config: BatteryConfig,
    /// Normalization applied before every SSIM comparison.
    pub ssim_normalization: NormMode,
    /// Test-set indices scored in every cell.
    pub inputs: Vec<usize>,
    /// `clean` first, then bugs in config order; methods and metrics in
    /// config order within each bug.
    pub cells: Vec<Cell>,
    /// Keyed `<model>/<split>`.
    pub accuracy: BTreeMap<String, f64>,
    /// Mean training loss per epoch, per trained model.
    pub training: BTreeMap<String, Vec<f64>>,
    pub cascade: Vec<CascadeCurve>,
    /// Files written next to the report, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl BatteryReport {
    pub fn cell(&self, bug: &str, method: &str, metric: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.bug == bug && c.method == method && c.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| Error::config(format!("report does not serialize: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "battery report".into(),
            message: e.to_string(),
        })?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "battery report".into(),
                found: r.schema_version,
                supported: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(r)
    }

    /// Flat score table; failed cells have empty mean and sem and n = 0.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for c in &self.cells {
            match &c.summary {
                Some(s) => writeln!(out, "{},{},{},{},{},{}", c.bug, c.method, c.metric, s.mean, s.sem, s.n),
                None => writeln!(out, "{},{},{},,,0", c.bug, c.method, c.metric),
            }
            .expect("writing to a string");
        }
        out
    }
}
