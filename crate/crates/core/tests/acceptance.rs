//! Release criteria 1–10, one PASS/FAIL line each.
//!
//! Run with `cargo test --release -p dropgraph --test acceptance -- --nocapture`
//! to see the lines; the single test fails if any criterion fails.

use dropgraph::experiments::{
    run_grid, sampling_grid, summarize, ExperimentConfig, RunRecord, SummaryRow, Task,
};
use dropgraph::regularizers::{RegularizerConfig, RegularizerSpec, SamplingStrategy, SchedulerKind};
use dropgraph::verify::{self, Budget, CheckResult};
use dropgraph::Parallelism;
use std::time::Instant;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Line {
    id: usize,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn from_check(id: usize, c: CheckResult) -> Line {
    Line {
        id,
        passed: c.passed,
        detail: c.detail,
        seconds: c.seconds,
    }
}

fn row<'a>(summary: &'a [SummaryRow], name: &str) -> &'a SummaryRow {
    summary.iter().find(|s| s.name == name).expect("config in summary")
}

fn image_base() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_image();
    c.name = "baseline".into();
    c.regularizer = RegularizerSpec::None;
    c
}

fn image_dropgraph() -> ExperimentConfig {
    let mut c = image_base();
    c.name = "dropgraph".into();
    c.regularizer = RegularizerSpec::DropGraph(RegularizerConfig {
        alpha: 0.2,
        rho_target: 0.1,
        block_size: 3,
        scheduler_kind: SchedulerKind::F1,
        ..Default::default()
    });
    c
}

fn sbm_configs() -> Vec<ExperimentConfig> {
    let mut dropout = ExperimentConfig::new(Task::NodeGraph);
    dropout.name = "sbm_dropout".into();
    dropout.regularizer = RegularizerSpec::Dropout {
        rho: 0.5,
        rescale: true,
        scheduler: SchedulerKind::Constant,
    };
    let mut dg = ExperimentConfig::new(Task::NodeGraph);
    dg.name = "sbm_dropgraph".into();
    dg.regularizer = RegularizerSpec::DropGraph(RegularizerConfig {
        alpha: 0.15,
        rho_target: 0.1,
        block_size: 1,
        ..Default::default()
    });
    vec![dropout, dg]
}

fn same_runs(a: &[RunRecord], b: &[RunRecord]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_results(y))
}

#[test]
fn acceptance() {
    let par = Parallelism::default();
    let budget = Budget::full();
    let mut lines = vec![
        from_check(1, verify::check_gradients(budget.grad_instances)),
        from_check(2, verify::check_inference_identity(budget.identity_cases)),
        from_check(3, verify::check_dropblock_degeneration(budget.degeneration_inputs)),
        from_check(4, verify::check_adjacency(budget.adjacency_cases)),
        from_check(5, verify::check_mask_rates(budget.masks_per_cell)),
        from_check(6, verify::check_schedulers()),
    ];

    // 7: train-only random partial reasoning over α, against the plain net
    let start = Instant::now();
    let mut configs = vec![image_base()];
    let grid = sampling_grid(&image_base(), &[SamplingStrategy::Random], &[0.125, 0.25, 0.5, 1.0], &[false]);
    configs.extend(grid.iter().map(|(_, c)| c.clone()));
    configs.push(image_dropgraph());
    let image_runs = run_grid(&configs, &SEEDS, par, None).expect("image runs");
    let summary = summarize(&image_runs);
    let base = row(&summary, "baseline");
    let full = row(&summary, &grid[3].0.name());
    let partial: Vec<(f64, f64)> = grid[..3]
        .iter()
        .map(|(cell, _)| (cell.alpha, row(&summary, &cell.name()).val_acc.median))
        .collect();
    let beats_full = partial.iter().all(|&(_, v)| v >= full.val_acc.median);
    let full_degrades = full.val_acc.median < base.val_acc.median;
    let grid_seconds = start.elapsed().as_secs_f64();
    lines.push(Line {
        id: 7,
        passed: beats_full && full_degrades,
        detail: format!(
            "median val: baseline {:.2}, α=1.0 {:.2}, {}",
            base.val_acc.median,
            full.val_acc.median,
            partial.iter().map(|(a, v)| format!("α={a} {v:.2}")).collect::<Vec<_>>().join(", ")
        ),
        seconds: grid_seconds,
    });

    // 8: DropGraph against the same baseline runs
    let dg = row(&summary, "dropgraph");
    let harness_ok = base.train_acc.median >= 99.0 && base.gap.median >= 5.0;
    lines.push(Line {
        id: 8,
        passed: dg.gap.median < base.gap.median && dg.val_acc.median >= base.val_acc.median - 0.5,
        detail: format!(
            "median gap {:.2} -> {:.2}, median val {:.2} -> {:.2} (baseline train {:.2}, harness {})",
            base.gap.median,
            dg.gap.median,
            base.val_acc.median,
            dg.val_acc.median,
            base.train_acc.median,
            if harness_ok { "valid" } else { "INVALID" }
        ),
        seconds: 0.0,
    });

    // 9: node classification
    let start = Instant::now();
    let sbm = sbm_configs();
    let sbm_runs = run_grid(&sbm, &SEEDS, par, None).expect("sbm runs");
    let sbm_summary = summarize(&sbm_runs);
    let (dropout, dropgraph) = (row(&sbm_summary, "sbm_dropout"), row(&sbm_summary, "sbm_dropgraph"));
    lines.push(Line {
        id: 9,
        passed: dropgraph.val_acc.median >= dropout.val_acc.median - 0.5,
        detail: format!(
            "median val: dropout {:.2}, dropgraph {:.2}",
            dropout.val_acc.median, dropgraph.val_acc.median
        ),
        seconds: start.elapsed().as_secs_f64(),
    });

    // 10: repeat a slice of every criterion and compare bit for bit
    let start = Instant::now();
    let mut repeat_ok = same_runs(&sbm_runs, &run_grid(&sbm, &SEEDS, par, None).expect("sbm rerun"));
    let pick = [configs[0].clone(), configs[4].clone(), image_dropgraph()];
    let again = run_grid(&pick, &[0], par, None).expect("image rerun");
    for r in &again {
        let first = image_runs.iter().find(|x| x.name == r.name && x.seed == 0).expect("first run");
        repeat_ok &= first.same_results(r);
    }
    let small = Budget::quick();
    let checks = |b: Budget| -> Vec<String> { verify::run_all(b, None).into_iter().map(|c| c.detail).collect() };
    repeat_ok &= checks(small) == checks(small);
    lines.push(Line {
        id: 10,
        passed: repeat_ok,
        detail: "reran the node runs, three image runs and the invariant suite".into(),
        seconds: start.elapsed().as_secs_f64(),
    });

    for l in &lines {
        println!(
            "criterion {:>2}: {}  ({:.1}s)  {}",
            l.id,
            if l.passed { "PASS" } else { "FAIL" },
            l.seconds,
            l.detail
        );
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
