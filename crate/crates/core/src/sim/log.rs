//! Per-step records and their on-disk formats.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::AgentDiagnostics;
use crate::dynamics::{AgentState, ControlInput};
use crate::error::{Error, Result};
use crate::sim::metrics::Summary;
use crate::sim::RunResult;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentRecord {
    pub id: usize,
    pub state: AgentState,
    /// Input applied over `[t, t + dt)`.
    pub input: ControlInput,
    pub nominal: ControlInput,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub t: f64,
    pub agents: Vec<AgentRecord>,
    /// One entry per controlled agent, ascending id. Empty on a failed step.
    pub controlled: Vec<AgentDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Layout of the wide CSV: which agents exist, which are controlled and how
/// many constituents each controlled agent has.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvLayout {
    pub agents: usize,
    pub controlled: Vec<usize>,
    pub constraints: usize,
}

impl CsvLayout {
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for i in 0..self.agents {
            for field in ["x", "y", "psi", "beta", "v", "a", "omega"] {
                cols.push(format!("agent{i}_{field}"));
            }
        }
        for &i in &self.controlled {
            for s in 0..self.constraints {
                cols.push(format!("h{s}_{i}"));
            }
            cols.push(format!("H_{i}"));
            for s in 0..self.constraints {
                cols.push(format!("k{s}_{i}"));
            }
            cols.push(format!("hp_{i}"));
            cols.push(format!("d_{i}"));
        }
        cols
    }

    pub fn row(&self, log: &StepLog) -> Vec<f64> {
        let mut row = vec![log.t];
        for i in 0..self.agents {
            match log.agents.get(i) {
                Some(rec) => {
                    let s = rec.state;
                    row.extend([s.x, s.y, s.psi, s.beta, s.v, rec.input.a, rec.input.omega]);
                }
                None => row.extend([f64::NAN; 7]),
            }
        }
        for &i in &self.controlled {
            match log.controlled.iter().find(|d| d.agent == i) {
                Some(d) => {
                    row.extend(padded(&d.h, self.constraints));
                    row.push(d.consolidated);
                    row.extend(padded(&d.k, self.constraints));
                    row.push(d.h_p);
                    row.push(d.margin);
                }
                None => row.extend(std::iter::repeat_n(f64::NAN, 2 * self.constraints + 3)),
            }
        }
        row
    }
}

fn padded(values: &[f64], len: usize) -> impl Iterator<Item = f64> + '_ {
    values.iter().copied().chain(std::iter::repeat(f64::NAN)).take(len)
}

pub fn trajectory_csv(layout: &CsvLayout, logs: &[StepLog]) -> String {
    let mut out = layout.header().join(",");
    out.push('\n');
    for log in logs {
        let row = layout.row(log);
        for (n, v) in row.iter().enumerate() {
            if n > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn steps_jsonl(logs: &[StepLog]) -> Result<String> {
    let mut out = String::new();
    for log in logs {
        out.push_str(&serde_json::to_string(log).map_err(|e| Error::Serialize(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    serde_json::to_string_pretty(summary).map_err(|e| Error::Serialize(e.to_string()))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

/// Writes `trajectory.csv`, `steps.jsonl` and `summary.json` into `dir`,
/// creating it if needed.
pub fn write_outputs(dir: &Path, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("trajectory.csv"), &trajectory_csv(&result.layout, &result.logs))?;
    write_file(&dir.join("steps.jsonl"), &steps_jsonl(&result.logs)?)?;
    write_file(&dir.join("summary.json"), &summary_json(&result.summary)?)
}
