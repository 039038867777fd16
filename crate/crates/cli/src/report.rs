//! CSV reports. Column meanings are listed in the README.

use crate::error::CliError;
use dropgraph::experiments::{write_records, RunRecord, RunStatus, Stat, SummaryRow};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

fn wrap(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Write {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

fn num(v: f64) -> String {
    if v.is_nan() { String::new() } else { v.to_string() }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn status(r: &RunRecord) -> String {
    match r.status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Diverged { epoch, .. } => format!("diverged@{epoch}"),
    }
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "row", "name", "config_hash", "seed", "status", "train_acc", "val_acc", "gap", "val_loss", "test_acc",
];

/// One `run` row per record, then `median`, `min` and `max` rows per config.
pub fn write_summary(path: &Path, records: &[RunRecord], summary: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(wrap(path))?;
    w.write_record(SUMMARY_HEADER).map_err(wrap(path))?;
    for r in records {
        w.write_record([
            "run".into(),
            r.name.clone(),
            r.config_hash.clone(),
            r.seed.to_string(),
            status(r),
            num(r.final_train_acc),
            num(r.final_val_acc),
            num(r.generalization_gap),
            num(r.final_val_loss),
            opt(r.final_test_acc),
        ])
        .map_err(wrap(path))?;
    }
    for s in summary {
        let pick: [(&str, fn(&Stat) -> f64); 3] = [("median", |s| s.median), ("min", |s| s.min), ("max", |s| s.max)];
        for (label, f) in pick {
            w.write_record([
                label.into(),
                s.name.clone(),
                s.config_hash.clone(),
                String::new(),
                format!("{}/{} completed", s.runs - s.diverged, s.runs),
                num(f(&s.train_acc)),
                num(f(&s.val_acc)),
                num(f(&s.gap)),
                num(f(&s.val_loss)),
                String::new(),
            ])
            .map_err(wrap(path))?;
        }
    }
    w.flush().map_err(|e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

pub const CURVES_HEADER: [&str; 10] = [
    "name", "seed", "epoch", "lr", "rho_start", "rho_end", "train_loss", "train_acc", "val_loss", "val_acc",
];

/// Per-epoch metrics in long format, for plotting.
pub fn write_curves(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(wrap(path))?;
    w.write_record(CURVES_HEADER).map_err(wrap(path))?;
    for r in records {
        for e in &r.epochs {
            w.write_record([
                r.name.clone(),
                r.seed.to_string(),
                e.epoch.to_string(),
                num(e.lr),
                num(e.rho_start),
                num(e.rho_end),
                num(e.train_loss),
                opt(e.train_acc),
                opt(e.val_loss),
                opt(e.val_acc),
            ])
            .map_err(wrap(path))?;
        }
    }
    w.flush().map_err(|e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

pub const SWEEP_HEADER: [&str; 9] = ["axis", "value", "seed", "status", "train_acc", "val_acc", "gap", "val_loss", "test_acc"];

/// Tidy sweep table: one row per (axis value, seed).
pub fn write_sweep(path: &Path, axis: &str, values: &[String], records: &[RunRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(wrap(path))?;
    w.write_record(SWEEP_HEADER).map_err(wrap(path))?;
    for r in records {
        let value = values
            .iter()
            .find(|v| r.name == format!("{axis}={v}"))
            .cloned()
            .unwrap_or_default();
        w.write_record([
            axis.to_string(),
            value,
            r.seed.to_string(),
            status(r),
            num(r.final_train_acc),
            num(r.final_val_acc),
            num(r.generalization_gap),
            num(r.final_val_loss),
            opt(r.final_test_acc),
        ])
        .map_err(wrap(path))?;
    }
    w.flush().map_err(|e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_runs(path: &Path, records: &[RunRecord]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    })?;
    write_records(BufWriter::new(file), records).map_err(CliError::from)
}
