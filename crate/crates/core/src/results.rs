//! Sweep result rows, per-axis-point aggregation, and CSV/JSON export.
//!
//! The CSV schema is fixed: `axis_value,seed,accuracy,loss,params,runtime_s,
//! status`. `axis_value` is empty for un-swept runs. Aggregates average over
//! completed (OK) runs only; INS and OOM rows are kept in the table but
//! excluded from the means.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::RunStatus;

pub const CSV_HEADER: &str = "axis_value,seed,accuracy,loss,params,runtime_s,status";

/// One (sweep point, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Swept value at this point; None when the sweep axis is `none`.
    pub axis_value: Option<u64>,
    pub seed: u64,
    /// Test accuracy at the best-validation checkpoint; NaN for failed runs.
    pub accuracy: f64,
    /// Validation loss at the best epoch; NaN for failed runs.
    pub loss: f64,
    pub params: usize,
    pub runtime_s: f64,
    pub status: RunStatus,
}

/// Mean and sample standard deviation (ddof = 1; 0 when n < 2) over the OK
/// runs at one axis point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxisAggregate {
    pub axis_value: Option<u64>,
    /// OK runs at this point; failed runs are counted separately.
    pub completed: usize,
    pub failed: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub runtime_mean: f64,
    pub runtime_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    /// Group rows by axis value in order of first appearance and aggregate
    /// the OK runs at each point.
    pub fn aggregates(&self) -> Vec<AxisAggregate> {
        let mut order: Vec<Option<u64>> = Vec::new();
        for row in &self.rows {
            if !order.contains(&row.axis_value) {
                order.push(row.axis_value);
            }
        }
        order
            .into_iter()
            .map(|axis| {
                let at_point: Vec<&ResultRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.axis_value == axis)
                    .collect();
                let ok: Vec<&&ResultRow> = at_point
                    .iter()
                    .filter(|r| r.status == RunStatus::Ok)
                    .collect();
                let acc: Vec<f64> = ok.iter().map(|r| r.accuracy).collect();
                let loss: Vec<f64> = ok.iter().map(|r| r.loss).collect();
                let rt: Vec<f64> = ok.iter().map(|r| r.runtime_s).collect();
                let (accuracy_mean, accuracy_std) = mean_std(&acc);
                let (loss_mean, loss_std) = mean_std(&loss);
                let (runtime_mean, runtime_std) = mean_std(&rt);
                AxisAggregate {
                    axis_value: axis,
                    completed: ok.len(),
                    failed: at_point.len() - ok.len(),
                    accuracy_mean,
                    accuracy_std,
                    loss_mean,
                    loss_std,
                    runtime_mean,
                    runtime_std,
                }
            })
            .collect()
    }

    /// Render the fixed-schema CSV; header only when the table is empty.
    /// Floats print in Rust's shortest round-trip form, so `from_csv`
    /// reconstructs them bit-exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let axis = r.axis_value.map_or(String::new(), |v| v.to_string());
            out.push_str(&format!(
                "{axis},{},{},{},{},{},{}\n",
                r.seed, r.accuracy, r.loss, r.params, r.runtime_s, r.status
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => {
                return Err(Error::Config(format!(
                    "results csv: expected header {CSV_HEADER:?}, found {other:?}"
                )));
            }
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(Error::Config(format!(
                    "results csv line {}: expected 7 fields, found {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let bad = |what: &str| {
                Error::Config(format!("results csv line {}: bad {what}", lineno + 2))
            };
            let axis_value = if fields[0].is_empty() {
                None
            } else {
                Some(fields[0].parse::<u64>().map_err(|_| bad("axis_value"))?)
            };
            rows.push(ResultRow {
                axis_value,
                seed: fields[1].parse().map_err(|_| bad("seed"))?,
                accuracy: fields[2].parse().map_err(|_| bad("accuracy"))?,
                loss: fields[3].parse().map_err(|_| bad("loss"))?,
                params: fields[4].parse().map_err(|_| bad("params"))?,
                runtime_s: fields[5].parse().map_err(|_| bad("runtime_s"))?,
                status: RunStatus::parse(fields[6]).ok_or_else(|| bad("status"))?,
            });
        }
        Ok(ResultsTable { rows })
    }

    /// JSON export: rows plus the derived aggregates.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            rows: &'a [ResultRow],
            aggregates: Vec<AxisAggregate>,
        }
        serde_json::to_string_pretty(&Export {
            rows: &self.rows,
            aggregates: self.aggregates(),
        })
        .map_err(|e| Error::Config(format!("serialize results: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Human-readable aggregate lines for terminal output.
    pub fn format_aggregates(&self) -> String {
        let mut out = String::new();
        for a in self.aggregates() {
            let axis = a
                .axis_value
                .map_or_else(|| "-".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "axis={axis} n={} accuracy {:.4} +- {:.4} loss {:.4} +- {:.4} runtime {:.2}s +- {:.2}s",
                a.completed,
                a.accuracy_mean,
                a.accuracy_std,
                a.loss_mean,
                a.loss_std,
                a.runtime_mean,
                a.runtime_std
            ));
            if a.failed > 0 {
                out.push_str(&format!(" ({} failed)", a.failed));
            }
            out.push('\n');
        }
        out
    }
}
