//! Command implementations behind the `dropgraph` binary.

pub mod error;
pub mod flat;
pub mod report;

use dropgraph::experiments::{multi_seed, run_grid, summarize, ExperimentConfig, RunRecord, SummaryRow};
use dropgraph::parallel::with_threads;
use dropgraph::verify::{eq6_sign_flipped, run_all, Budget, CheckResult};
use dropgraph::Parallelism;
pub use error::CliError;
use flat::RegularizerSettings;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Overrides shared by `run` and `sweep`.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    /// 0 = one worker per core, 1 = strictly sequential.
    pub threads: usize,
}

impl RunOptions {
    fn parallelism(&self) -> Parallelism {
        if self.threads == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::default()
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
        path: path.display().to_string(),
        source: e,
    })?;
    flat::parse_config(&text)
}

fn prepare_out(cfg: &mut ExperimentConfig, opts: &RunOptions) -> Result<PathBuf, CliError> {
    if let Some(seeds) = &opts.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(dir) = &opts.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Write {
        path: dir.display().to_string(),
        source: e,
    })?;
    Ok(dir)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Write {
        path: path.display().to_string(),
        source: e,
    }
}

fn header(out: &mut dyn Write, command: &str, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(), CliError> {
    let r = RegularizerSettings::from_spec(&cfg.regularizer);
    let seeds: Vec<String> = cfg.seeds.iter().map(u64::to_string).collect();
    let w = |e| io_err(Path::new("stdout"))(e);
    writeln!(
        out,
        "# dropgraph {command} | config {} {} | task {} | seeds {} | threads {}",
        cfg.name,
        &cfg.hash()[..12],
        cfg.task,
        seeds.join(","),
        opts.threads
    )
    .map_err(w)?;
    writeln!(
        out,
        "# regularizer {} alpha={} rho={} block_size={} adjacency_mode={} scheduler={}",
        r.kind, r.alpha, r.rho, r.block_size, r.adjacency_mode, r.scheduler
    )
    .map_err(w)
}

fn print_summary(out: &mut dyn Write, summary: &[SummaryRow]) -> Result<(), CliError> {
    for s in summary {
        if s.runs == s.diverged {
            writeln!(out, "{}: no completed runs | 0/{} completed", s.name, s.runs)
                .map_err(io_err(Path::new("stdout")))?;
            continue;
        }
        writeln!(
            out,
            "{}: val_acc median {:.2} [{:.2}, {:.2}] | train_acc median {:.2} | gap median {:.2} | {}/{} completed",
            s.name,
            s.val_acc.median,
            s.val_acc.min,
            s.val_acc.max,
            s.train_acc.median,
            s.gap.median,
            s.runs - s.diverged,
            s.runs
        )
        .map_err(io_err(Path::new("stdout")))?;
    }
    Ok(())
}

fn divergence(records: &[RunRecord]) -> Result<(), CliError> {
    let count = records.iter().filter(|r| r.diverged()).count();
    if count > 0 {
        return Err(CliError::Diverged {
            count,
            total: records.len(),
        });
    }
    Ok(())
}

/// `run <config>`: every seed of one config, then `summary.csv`,
/// `curves.csv`, `runs.jsonl` and the resolved `config.cfg`.
pub fn cmd_run(config: &Path, opts: &RunOptions, out: &mut dyn Write) -> Result<Vec<RunRecord>, CliError> {
    let mut cfg = load_config(config)?;
    let dir = prepare_out(&mut cfg, opts)?;
    cfg.validate()?;
    header(out, "run", &cfg, opts)?;
    let cache = dir.join("cache");
    let par = opts.parallelism();
    let (records, summary) = with_threads(opts.threads, || multi_seed(std::slice::from_ref(&cfg), &cfg.seeds, par, Some(&cache)))?;
    std::fs::write(dir.join("config.cfg"), flat::to_text(&cfg)).map_err(io_err(&dir))?;
    report::write_summary(&dir.join("summary.csv"), &records, &summary)?;
    report::write_curves(&dir.join("curves.csv"), &records)?;
    report::write_runs(&dir.join("runs.jsonl"), &records)?;
    print_summary(out, &summary)?;
    divergence(&records)?;
    Ok(records)
}

/// `sweep <config> --axis A --values v1,v2`: the cross product of values and
/// seeds, written to `sweep.csv` plus the `run` outputs.
pub fn cmd_sweep(
    config: &Path,
    axis: &str,
    values: &[String],
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<Vec<RunRecord>, CliError> {
    let mut base = load_config(config)?;
    if values.is_empty() {
        return Err(CliError::Value {
            key: "--values".into(),
            reason: "at least one value is required".into(),
        });
    }
    let configs = values
        .iter()
        .map(|v| flat::with_axis_value(&base, axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = prepare_out(&mut base, opts)?;
    header(out, "sweep", &base, opts)?;
    let cache = dir.join("cache");
    let par = opts.parallelism();
    let seeds = base.seeds.clone();
    let records = with_threads(opts.threads, || run_grid(&configs, &seeds, par, Some(&cache)))?;
    let summary = summarize(&records);
    std::fs::write(dir.join("config.cfg"), flat::to_text(&base)).map_err(io_err(&dir))?;
    report::write_sweep(&dir.join("sweep.csv"), axis, values, &records)?;
    report::write_summary(&dir.join("summary.csv"), &records, &summary)?;
    report::write_curves(&dir.join("curves.csv"), &records)?;
    report::write_runs(&dir.join("runs.jsonl"), &records)?;
    print_summary(out, &summary)?;
    divergence(&records)?;
    Ok(records)
}

/// Faults `verify` can inject to show that its checks bite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Adds instead of subtracts the softmax in the adjacency.
    Eq6Sign,
}

/// `verify`: the invariant suite as a table; fails if any check fails.
pub fn cmd_verify(quick: bool, fault: Option<Fault>, out: &mut dyn Write) -> Result<Vec<CheckResult>, CliError> {
    let budget = if quick { Budget::quick() } else { Budget::full() };
    let adjacency = fault.map(|Fault::Eq6Sign| eq6_sign_flipped as dropgraph::verify::AdjacencyFn);
    let results = run_all(budget, adjacency);
    let w = io_err(Path::new("stdout"));
    writeln!(out, "# dropgraph verify | budget {}", if quick { "quick" } else { "full" }).map_err(&w)?;
    writeln!(out, "{:<24} {:<6} {:>9}  detail", "check", "result", "seconds").map_err(&w)?;
    for r in &results {
        writeln!(
            out,
            "{:<24} {:<6} {:>9.3}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        )
        .map_err(&w)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(results)
}
