use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,acc_before,acc_after,gap,rate,pruned_count,wall_seconds";

/// One epoch of the training log. Accuracies are fractions in [0, 1]
/// (NaN on epochs skipped by `eval_every`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub acc_before: f64,
    pub acc_after: f64,
    pub gap: f64,
    pub rate: f64,
    pub pruned_count: usize,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.3}",
            self.epoch,
            self.train_loss,
            self.acc_before,
            self.acc_after,
            self.gap,
            self.rate,
            self.pruned_count,
            self.wall_seconds
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    let _ = writeln!(out, "{METRICS_HEADER}");
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}
