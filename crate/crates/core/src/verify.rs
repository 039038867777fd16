//! The invariant suite behind `dropgraph verify` and the acceptance target.
//!
//! Each check returns a [`CheckResult`] instead of panicking so callers can
//! print a table. Sizes come from [`Budget`]; [`Budget::full`] is the
//! release setting.

use crate::backbones::{normalized_adjacency, GraphInstance, Pass, TinyResNet, TinyResNetConfig, TwoLayerGcn, TwoLayerGcnConfig};
use crate::error::Result;
use crate::experiments::sgd_step;
use crate::nn::{batch_norm, conv2d, cross_entropy, global_avg_pool, Bound, ConvGeometry, NormMode, NormState, ParamStore};
use crate::parallel::Parallelism;
use crate::regularizers::{
    eq6_adjacency, sample_block_masks, schedule_rho, similarity, AdjacencyMode, DropGraph, GeneratorKind, Mode,
    PartialGraphConfig, Progress, RegularizerConfig, RegularizerSpec, SchedulerKind,
};
use crate::rng::RngStream;
use crate::tensor::{grad_check_many, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Sample counts per check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub grad_instances: usize,
    pub identity_cases: usize,
    pub degeneration_inputs: usize,
    pub adjacency_cases: usize,
    pub masks_per_cell: usize,
}

impl Budget {
    pub fn full() -> Self {
        Self {
            grad_instances: 100,
            identity_cases: 3,
            degeneration_inputs: 1000,
            adjacency_cases: 10_000,
            masks_per_cell: 10_000,
        }
    }

    pub fn quick() -> Self {
        Self {
            grad_instances: 10,
            identity_cases: 1,
            degeneration_inputs: 100,
            adjacency_cases: 1000,
            masks_per_cell: 1000,
        }
    }
}

/// Builds `A` from raw similarities; swapped out to test the checks.
pub type AdjacencyFn = for<'t> fn(&Var<'t>) -> Result<Var<'t>>;

/// Deliberately wrong adjacency, `(1 + softmax(S)) / (n − 1)`.
pub fn eq6_sign_flipped<'t>(sim: &Var<'t>) -> Result<Var<'t>> {
    let n = sim.shape()[0];
    let d = (n.max(2) - 1) as f64;
    Ok(sim.softmax_rows()?.affine(1.0 / d, 1.0 / d))
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn normal_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// `Σ y ⊙ r` with a fixed random `r`, so every output coordinate matters.
fn probe_loss<'t>(y: &Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    Ok(y.mul(&y.tape().constant(r.clone()))?.sum())
}

/// Worst relative gradient error for one random instance of every layer
/// and of the full train-mode regularizer.
pub fn gradient_errors(instance: u64) -> Result<Vec<(&'static str, f64)>> {
    const EPS: f64 = 1e-5;
    let stream = RngStream::new(instance).child(0x6772_6164);
    let mut rng = stream.rng();
    let mut out = Vec::new();

    // convolution
    let (n, cin, cout, k) = (2, rng.random_range(1..=3), rng.random_range(1..=3), [1, 3][rng.random_range(0..2)]);
    let size = rng.random_range(k.max(3)..=5);
    let geom = ConvGeometry {
        stride: rng.random_range(1..=2),
        padding: rng.random_range(0..=k / 2),
    };
    let ho = geom.output_size(size, k).expect("fits");
    let r = normal_tensor(&[n, cout, ho, ho], &mut rng);
    let inputs = [
        normal_tensor(&[n, cin, size, size], &mut rng),
        normal_tensor(&[cout, cin, k, k], &mut rng),
        normal_tensor(&[cout], &mut rng),
    ];
    let err = grad_check_many(
        |_, v| probe_loss(&conv2d(&v[0], &v[1], &v[2], geom, Parallelism::Sequential)?, &r),
        &inputs,
        EPS,
    )?;
    out.push(("conv2d", err));

    // linear
    let (m, i, o) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4));
    let r = normal_tensor(&[m, o], &mut rng);
    let inputs = [normal_tensor(&[m, i], &mut rng), normal_tensor(&[i, o], &mut rng), normal_tensor(&[o], &mut rng)];
    let err = grad_check_many(|_, v| probe_loss(&v[0].matmul(&v[1])?.add_row_vector(&v[2])?, &r), &inputs, EPS)?;
    out.push(("linear", err));

    // batch norm, train statistics
    let (c, hw) = (rng.random_range(1..=3), rng.random_range(2..=3));
    let r = normal_tensor(&[2, c, hw, hw], &mut rng);
    let inputs = [
        normal_tensor(&[2, c, hw, hw], &mut rng),
        normal_tensor(&[c], &mut rng),
        normal_tensor(&[c], &mut rng),
    ];
    let err = grad_check_many(
        |_, v| {
            let mut st = NormState::new(c, 0.1);
            probe_loss(&batch_norm(&v[0], &v[1], &v[2], &mut st, NormMode::Train)?, &r)
        },
        &inputs,
        EPS,
    )?;
    out.push(("batch_norm", err));

    // relu, pooling, softmax, normalization, cross-entropy
    let x = normal_tensor(&[2, 3, 3, 3], &mut rng);
    let r = normal_tensor(&[2, 3], &mut rng);
    let err = grad_check_many(|_, v| probe_loss(&global_avg_pool(&v[0].relu())?, &r), &[x], EPS)?;
    out.push(("relu_pool", err));
    let x = normal_tensor(&[3, 4], &mut rng);
    let r = normal_tensor(&[3, 4], &mut rng);
    let err = grad_check_many(|_, v| probe_loss(&v[0].softmax_rows()?.l2_normalize_rows()?, &r), std::slice::from_ref(&x), EPS)?;
    out.push(("softmax_normalize", err));
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
    let err = grad_check_many(|_, v| cross_entropy(&v[0], &labels), &[x], EPS)?;
    out.push(("cross_entropy", err));

    // full regularizer with pinned streams: input plus every generator weight
    let c = 4 * rng.random_range(1..=2);
    let (h, w) = (rng.random_range(3..=5), rng.random_range(3..=5));
    let mode = [AdjacencyMode::Eq6, AdjacencyMode::Learned, AdjacencyMode::Similarity][rng.random_range(0..3)];
    let cfg = RegularizerConfig {
        alpha: rng.random_range(0.2..0.6),
        rho_target: rng.random_range(0.2..0.5),
        block_size: [1, 3][rng.random_range(0..2)],
        adjacency_mode: mode,
        normalize_similarity: rng.random(),
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let dg = DropGraph::new(&mut store, "dg", cfg, c, (h, w), &stream.child(1))?;
    // spread the learned matrix so it is not a constant
    for p in store.iter_mut() {
        if p.name.ends_with("adjacency") {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
    }
    let run = stream.child(2);
    let r = normal_tensor(&[2, c, h, w], &mut rng);
    let mut inputs = vec![normal_tensor(&[2, c, h, w], &mut rng)];
    inputs.extend(store.iter().map(|p| p.value.clone()));
    let err = grad_check_many(
        |_, v| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = dg.forward(&v[0], &p, cfg.rho_target, &run, Mode::Train, None)?.output;
            probe_loss(&y, &r)
        },
        &inputs,
        EPS,
    )?;
    out.push(("dropgraph", err));
    Ok(out)
}

pub fn check_gradients(instances: usize) -> CheckResult {
    timed("gradients", || {
        let mut worst = ("", 0.0f64);
        for i in 0..instances {
            for (layer, err) in gradient_errors(i as u64)? {
                if !(err <= worst.1) {
                    worst = (layer, err);
                }
            }
        }
        Ok((worst.1 <= 1e-5, format!("max rel err {:.2e} ({}) over {instances} instances", worst.1, worst.0)))
    })
}

/// Every regularizer kind that is skipped at inference.
pub fn skippable_specs() -> Vec<RegularizerSpec> {
    let mut specs = vec![
        RegularizerSpec::Dropout {
            rho: 0.2,
            rescale: true,
            scheduler: SchedulerKind::Constant,
        },
        RegularizerSpec::SpatialDropout {
            rho: 0.2,
            rescale: false,
            scheduler: SchedulerKind::F1,
        },
        RegularizerSpec::DropBlock {
            rho: 0.2,
            block_size: 3,
            scheduler: SchedulerKind::F3,
        },
        RegularizerSpec::PartialGraph(PartialGraphConfig {
            alpha: 0.5,
            ..Default::default()
        }),
    ];
    for mode in AdjacencyMode::ALL {
        specs.push(RegularizerSpec::DropGraph(RegularizerConfig {
            adjacency_mode: mode,
            rho_target: 0.2,
            ..Default::default()
        }));
    }
    for kind in [GeneratorKind::RandomNoise, GeneratorKind::AvgPool] {
        specs.push(RegularizerSpec::DropGraph(RegularizerConfig {
            generator_kind: kind,
            ..Default::default()
        }));
    }
    specs
}

fn small_resnet() -> TinyResNetConfig {
    TinyResNetConfig {
        image_size: 8,
        stem_channels: 4,
        groups: vec![(1, 4), (2, 8)],
        classes: 3,
        regularize_groups: vec![0, 1],
        ..Default::default()
    }
}

/// Trains the regularized CNN for two steps, copies its backbone state into
/// a regularizer-free twin and compares eval logits bit for bit.
fn resnet_identity(spec: RegularizerSpec, case: u64) -> Result<bool> {
    let cfg = small_resnet();
    let seed = RngStream::new(case);
    let mut reg = TinyResNet::new(cfg.clone(), spec, &seed)?;
    let mut plain = TinyResNet::new(cfg, RegularizerSpec::None, &seed)?;
    let mut rng = seed.child(7).rng();
    for step in 0..2 {
        let x = normal_tensor(&[4, 3, 8, 8], &mut rng);
        let tape = Tape::new();
        let p = reg.store.bind(&tape, true);
        let pass = Pass::train(Progress { step: step + 1, total_steps: 2 }, seed.child(8).child(step as u64));
        let loss = cross_entropy(&reg.forward(&tape.constant(x), &p, &pass)?, &[0, 1, 2, 0])?;
        tape.backward(loss)?;
        reg.store.zero_grads();
        reg.store.accumulate_grads(&p);
        sgd_step(&mut reg.store, 0.05, 0.9, 5e-4);
    }
    plain.load_state(&reg.state_entries())?;
    let x = normal_tensor(&[5, 3, 8, 8], &mut rng);
    let tape = Tape::new();
    let a = reg.forward(&tape.constant(x.clone()), &reg.store.bind(&tape, false), &Pass::eval())?.value();
    let b = plain.forward(&tape.constant(x), &plain.store.bind(&tape, false), &Pass::eval())?.value();
    Ok(a.bit_eq(&b))
}

fn gcn_identity(spec: RegularizerSpec, case: u64) -> Result<bool> {
    let seed = RngStream::new(case);
    let mut rng = seed.child(9).rng();
    let n = 12;
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1 + rng.random_range(0..3)) % n)).collect();
    let g = GraphInstance {
        node_features: normal_tensor(&[n, 5], &mut rng),
        normalized_adjacency: normalized_adjacency(n, &edges)?,
        labels: (0..n).map(|i| i % 3).collect(),
        train: vec![0, 1, 2],
        val: vec![3, 4],
        test: vec![5],
    };
    let cfg = TwoLayerGcnConfig {
        in_features: 5,
        hidden: 8,
        classes: 3,
    };
    let mut reg = TwoLayerGcn::new(cfg, n, spec, &seed)?;
    let plain = TwoLayerGcn::new(cfg, n, RegularizerSpec::None, &seed)?;
    let tape = Tape::new();
    let p = reg.store.bind(&tape, true);
    let logits = reg.forward(&g, &p, &Pass::train(Progress::finished(), seed.child(3)))?;
    tape.backward(logits.sum())?;
    reg.store.accumulate_grads(&p);
    sgd_step(&mut reg.store, 0.01, 0.0, 0.0);
    let mut plain = plain;
    plain.load_state(&reg.state_entries())?;
    let a = reg.forward(&g, &reg.store.bind(&tape, false), &Pass::eval())?.value();
    let b = plain.forward(&g, &plain.store.bind(&tape, false), &Pass::eval())?.value();
    Ok(a.bit_eq(&b))
}

pub fn check_inference_identity(cases: usize) -> CheckResult {
    timed("inference_identity", || {
        let specs = skippable_specs();
        let mut failures = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            for case in 0..cases as u64 {
                if !resnet_identity(*spec, case * 1000 + i as u64)? {
                    failures.push(format!("cnn/{}", spec.name()));
                }
                if !gcn_identity(*spec, case * 1000 + i as u64)? {
                    failures.push(format!("gcn/{}", spec.name()));
                }
            }
        }
        let total = 2 * specs.len() * cases;
        Ok(if failures.is_empty() {
            (true, format!("{total} eval comparisons bit-identical"))
        } else {
            (false, format!("mismatch: {}", failures.join(", ")))
        })
    })
}

/// Zero adjacency versus an independent mask-multiply oracle and versus the
/// DropBlock baseline, on `inputs` random maps.
pub fn check_dropblock_degeneration(inputs: usize) -> CheckResult {
    timed("dropblock_degeneration", || {
        let (c, h, w) = (8, 6, 6);
        let zero = RegularizerConfig {
            adjacency_mode: AdjacencyMode::Zero,
            rho_target: 0.3,
            ..Default::default()
        };
        let masking = RegularizerConfig {
            generator_kind: GeneratorKind::None,
            ..zero
        };
        let mut store = ParamStore::new();
        let dg = DropGraph::new(&mut store, "dg", zero, c, (h, w), &RngStream::new(1))?;
        let db = DropGraph::new(&mut store, "db", masking, c, (h, w), &RngStream::new(1))?;
        let mut mismatches = 0;
        for i in 0..inputs as u64 {
            let stream = RngStream::new(i).child(0x6465_6765);
            let x = normal_tensor(&[2, c, h, w], &mut stream.child(0).rng());
            let run = stream.child(1);
            let tape = Tape::new();
            let p = store.bind(&tape, false);
            let xv = tape.constant(x.clone());
            let a = dg.forward(&xv, &p, 0.3, &run, Mode::Train, None)?;
            let b = db.forward(&xv, &p, 0.3, &run, Mode::Train, None)?.output.value();
            let mask = sample_block_masks(2, h, w, 3, 0.3, &run.child(crate::rng::site::MASK))?;
            let oracle = Tensor::from_fn(&[2, c, h, w], |j| {
                let (bi, pos) = (j / (c * h * w), j % (h * w));
                if mask.gate.data()[bi * h * w + pos] == 0.0 {
                    0.0
                } else {
                    x.data()[j]
                }
            });
            let out = a.output.value();
            if !(out.bit_eq(&oracle) && out.bit_eq(&b)) {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{mismatches} of {inputs} inputs differ")))
    })
}

/// Row sums, range, single-vertex and diagonal properties of `adjacency`.
pub fn check_adjacency_with(cases: usize, adjacency: AdjacencyFn) -> CheckResult {
    timed("adjacency_properties", || {
        let mut rng = RngStream::new(0x0061_646a).rng();
        let (mut row_err, mut range_bad, mut single_bad, mut diag_bad) = (0.0f64, 0, 0, 0);
        for _ in 0..cases {
            let n = rng.random_range(1..=12);
            let c = rng.random_range(1..=8);
            let scale = rng.random_range(0.1..3.0);
            let v = normal_tensor(&[n, c], &mut rng).map(|x| x * scale);
            let tape = Tape::new();
            let vv = tape.constant(v);
            for normalize in [false, true] {
                let a = adjacency(&similarity(&vv, normalize)?)?.value();
                let d = a.data();
                if d.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    range_bad += 1;
                }
                if n == 1 {
                    if d[0] != 0.0 {
                        single_bad += 1;
                    }
                    continue;
                }
                for row in d.chunks_exact(n) {
                    row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
                }
                if normalize {
                    for (i, row) in d.chunks_exact(n).enumerate() {
                        if row.iter().any(|&x| x < row[i] - 1e-15) {
                            diag_bad += 1;
                        }
                    }
                }
            }
        }
        let passed = row_err <= 1e-10 && range_bad == 0 && single_bad == 0 && diag_bad == 0;
        Ok((
            passed,
            format!(
                "{cases} cases: max |row sum - 1| {row_err:.1e}, out of range {range_bad}, n=1 nonzero {single_bad}, diagonal not minimal {diag_bad}"
            ),
        ))
    })
}

pub fn check_adjacency(cases: usize) -> CheckResult {
    check_adjacency_with(cases, eq6_adjacency)
}

/// The `(h, w, s)` × ρ calibration grid.
pub const MASK_GRID: [(usize, usize, usize); 3] = [(16, 16, 3), (32, 32, 3), (16, 16, 5)];
pub const MASK_RHOS: [f64; 3] = [0.05, 0.1, 0.2];

/// Mean dropped fraction over `masks` draws for one grid cell.
pub fn empirical_drop_rate(h: usize, w: usize, s: usize, rho: f64, masks: usize) -> Result<f64> {
    let stream = RngStream::new(0x6d61_736b).descend(&[h as u64, s as u64, rho.to_bits()]);
    let batch = sample_block_masks(masks, h, w, s, rho, &stream)?;
    Ok(batch.dropped_fraction)
}

pub fn check_mask_rates(masks: usize) -> CheckResult {
    timed("mask_rate", || {
        let mut worst = 0.0f64;
        let mut cells = Vec::new();
        for &(h, w, s) in &MASK_GRID {
            for &rho in &MASK_RHOS {
                let rate = empirical_drop_rate(h, w, s, rho, masks)?;
                let rel = (rate - rho).abs() / rho;
                worst = worst.max(rel);
                cells.push(format!("{h}x{w}/s{s}/ρ{rho}:{rate:.4}"));
            }
        }
        Ok((worst <= 0.10, format!("max relative deviation {:.2}% [{}]", 100.0 * worst, cells.join(" "))))
    })
}

pub fn check_schedulers() -> CheckResult {
    timed("schedulers", || {
        const T: usize = 1000;
        let mut problems = Vec::new();
        for rho in [0.05, 0.1, 0.3, 0.9] {
            let curve = |kind| -> Result<Vec<f64>> {
                (0..=T)
                    .map(|step| schedule_rho(&Progress { step, total_steps: T }.scheduler(kind, rho)))
                    .collect()
            };
            let f1 = curve(SchedulerKind::F1)?;
            let f2 = curve(SchedulerKind::F2)?;
            for kind in [SchedulerKind::F1, SchedulerKind::F2, SchedulerKind::F3, SchedulerKind::F4, SchedulerKind::F5] {
                let f = curve(kind)?;
                if f[0] != 0.0 {
                    problems.push(format!("{kind}(0)={}", f[0]));
                }
                if (f[T] - rho).abs() > 1e-12 {
                    problems.push(format!("{kind}(T)={} for ρ={rho}", f[T]));
                }
                if f.windows(2).any(|p| p[1] < p[0]) {
                    problems.push(format!("{kind} decreases for ρ={rho}"));
                }
            }
            if f2.iter().zip(&f1).any(|(a, b)| a > b) {
                problems.push(format!("f2 > f1 somewhere for ρ={rho}"));
            }
        }
        Ok(if problems.is_empty() {
            (true, "f1..f5: f(0)=0, f(T)=ρ, nondecreasing, f2 ≤ f1".to_string())
        } else {
            (false, problems.join("; "))
        })
    })
}

/// Every check in a fixed order. `adjacency` replaces the default builder
/// for the adjacency check only.
pub fn run_all(budget: Budget, adjacency: Option<AdjacencyFn>) -> Vec<CheckResult> {
    vec![
        check_gradients(budget.grad_instances),
        check_adjacency_with(budget.adjacency_cases, adjacency.unwrap_or(eq6_adjacency)),
        check_dropblock_degeneration(budget.degeneration_inputs),
        check_inference_identity(budget.identity_cases),
        check_mask_rates(budget.masks_per_cell),
        check_schedulers(),
    ]
}
