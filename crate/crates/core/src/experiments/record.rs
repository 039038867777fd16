use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Accuracies are percentages; losses are mean cross-entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Scheduled ρ at the first and after the last step of the epoch.
    pub rho_start: f64,
    pub rho_end: f64,
    /// Mean train-mode loss over the epoch's steps.
    pub train_loss: f64,
    /// Clean (eval-mode) pass over the train split; absent on skipped epochs.
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Non-finite loss at this epoch and step.
    Diverged { epoch: usize, step: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub epochs: Vec<EpochRecord>,
    pub final_train_acc: f64,
    pub final_val_acc: f64,
    pub final_val_loss: f64,
    /// Node task only.
    pub final_test_acc: Option<f64>,
    /// `final_train_acc - final_val_acc`.
    pub generalization_gap: f64,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.status != RunStatus::Completed
    }

    /// Equality on everything except wall time.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        let strip = |r: &RunRecord| RunRecord {
            wall_time_s: 0.0,
            ..r.clone()
        };
        // compare through bits so NaN losses in diverged runs still match
        serde_json::to_string(&strip(self)).ok() == serde_json::to_string(&strip(other)).ok()
    }
}

/// One JSON object per line.
pub fn write_records<W: Write>(mut out: W, records: &[RunRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format {
            what: "run record",
            reason: e.to_string(),
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "run record",
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
