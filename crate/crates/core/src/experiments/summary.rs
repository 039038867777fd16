//! Multi-seed protocol and aggregation.

use super::config::{ExperimentConfig, Task};
use super::record::RunRecord;
use super::train::{prepare_cached, run_one, Prepared};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Parallelism};
use crate::regularizers::{PartialGraphConfig, RegularizerSpec, SamplingStrategy};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Median with the even-length convention of averaging the middle pair.
/// NaNs sort last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: median(values),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub config_hash: String,
    pub runs: usize,
    pub diverged: usize,
    pub train_acc: Stat,
    pub val_acc: Stat,
    pub gap: Stat,
    pub val_loss: Stat,
}

/// One row per config name, in first-appearance order. Diverged runs are
/// counted but left out of the statistics.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let all: Vec<&RunRecord> = records.iter().filter(|r| r.name == name).collect();
            let ok: Vec<&RunRecord> = all.iter().copied().filter(|r| !r.diverged()).collect();
            let col = |f: fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            SummaryRow {
                name: name.to_string(),
                config_hash: all[0].config_hash.clone(),
                runs: all.len(),
                diverged: all.len() - ok.len(),
                train_acc: Stat::of(&col(|r| r.final_train_acc)),
                val_acc: Stat::of(&col(|r| r.final_val_acc)),
                gap: Stat::of(&col(|r| r.generalization_gap)),
                val_loss: Stat::of(&col(|r| r.final_val_loss)),
            }
        })
        .collect()
}

fn same_data(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.task == b.task
        && match a.task {
            Task::Image => a.image == b.image,
            Task::NodeGraph => a.graph == b.graph,
        }
}

/// Every `(config, seed)` pair, config-major. Datasets are generated once
/// per distinct data spec (optionally through a cache directory); runs are
/// independent jobs.
pub fn run_grid(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    par: Parallelism,
    cache: Option<&Path>,
) -> Result<Vec<RunRecord>> {
    let mut data: Vec<(usize, Prepared)> = Vec::new();
    let mut which = Vec::with_capacity(configs.len());
    for (i, c) in configs.iter().enumerate() {
        c.validate()?;
        match data.iter().position(|(j, _)| same_data(&configs[*j], c)) {
            Some(k) => which.push(k),
            None => {
                data.push((i, prepare_cached(c, cache)?));
                which.push(data.len() - 1);
            }
        }
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    map_indexed(jobs.len(), par, |j| {
        let (c, seed) = jobs[j];
        run_one(&configs[c], &data[which[c]].1, seed, par)
    })
    .into_iter()
    .collect()
}

/// [`run_grid`] plus the per-config summary; needs at least three seeds.
pub fn multi_seed(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    par: Parallelism,
    cache: Option<&Path>,
) -> Result<(Vec<RunRecord>, Vec<SummaryRow>)> {
    if seeds.len() < 3 {
        return Err(Error::config("seeds", format!("multi-seed runs need at least 3 seeds, got {}", seeds.len())));
    }
    let records = run_grid(configs, seeds, par, cache)?;
    let summary = summarize(&records);
    Ok((records, summary))
}

/// One cell of the sampling grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingCell {
    pub strategy: SamplingStrategy,
    pub alpha: f64,
    pub keep_at_inference: bool,
}

impl SamplingCell {
    pub fn name(&self) -> String {
        let strategy = match self.strategy {
            SamplingStrategy::Random => "random",
            SamplingStrategy::Top => "top",
        };
        let when = if self.keep_at_inference { "train_and_infer" } else { "train_only" };
        format!("partial_{strategy}_a{}_{when}", self.alpha)
    }
}

/// Partial-graph configs over strategy × α × inference use, built on `base`.
pub fn sampling_grid(
    base: &ExperimentConfig,
    strategies: &[SamplingStrategy],
    alphas: &[f64],
    inference: &[bool],
) -> Vec<(SamplingCell, ExperimentConfig)> {
    let mut out = Vec::new();
    for &strategy in strategies {
        for &alpha in alphas {
            for &keep_at_inference in inference {
                let cell = SamplingCell {
                    strategy,
                    alpha,
                    keep_at_inference,
                };
                let mut cfg = base.clone();
                cfg.name = cell.name();
                cfg.regularizer = RegularizerSpec::PartialGraph(PartialGraphConfig {
                    alpha,
                    strategy,
                    keep_at_inference,
                });
                out.push((cell, cfg));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_matches_sort_oracle() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
        assert!(median(&[]).is_nan());
        let s = Stat::of(&[5.0, -1.0, 2.0]);
        assert_eq!((s.median, s.min, s.max), (2.0, -1.0, 5.0));
    }

    #[test]
    fn grid_names_are_unique() {
        let base = ExperimentConfig::new(Task::Image);
        let grid = sampling_grid(
            &base,
            &[SamplingStrategy::Random, SamplingStrategy::Top],
            &[0.125, 0.25, 0.5, 1.0],
            &[false, true],
        );
        assert_eq!(grid.len(), 16);
        let mut names: Vec<_> = grid.iter().map(|(_, c)| c.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 16);
    }

    #[test]
    fn too_few_seeds_is_a_config_error() {
        let base = ExperimentConfig::new(Task::NodeGraph);
        assert!(matches!(multi_seed(&[base], &[1, 2], Parallelism::Sequential, None), Err(Error::Config { .. })));
    }
}
