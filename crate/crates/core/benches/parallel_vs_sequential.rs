//! Sequential against rayon for the three places the core fans out:
//! the conv kernel, per-item mask sampling and independent seeds.
//!
//! Build without the `parallel` feature and both arms run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dropgraph::experiments::{prepare, run_grid, ExperimentConfig, Task};
use dropgraph::nn::{conv2d, ConvGeometry};
use dropgraph::parallel::map_indexed;
use dropgraph::regularizers::sample_block_mask;
use dropgraph::{Parallelism, RngStream, Tape, Tensor};
use std::hint::black_box;

const ARMS: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_32x16x16x16");
    let x = Tensor::from_fn(&[32, 16, 16, 16], |i| (i as f64 * 0.01).sin());
    let k = Tensor::from_fn(&[16, 16, 3, 3], |i| (i as f64 * 0.1).cos() * 0.1);
    let b = Tensor::zeros(&[16]);
    let g = ConvGeometry { stride: 1, padding: 1 };
    for (name, par) in ARMS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let tape = Tape::new();
                let y = conv2d(&tape.constant(x.clone()), &tape.constant(k.clone()), &tape.constant(b.clone()), g, par);
                black_box(y.unwrap().value());
            })
        });
    }
    group.finish();
}

fn masks(c: &mut Criterion) {
    let mut group = c.benchmark_group("block_masks_512x16x16");
    let root = RngStream::new(1);
    for (name, par) in ARMS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let rates = map_indexed(512, par, |i| {
                    let m = sample_block_mask(16, 16, 3, 0.1, &root.child(i as u64)).unwrap();
                    m.item(0).iter().filter(|&&v| v == 0.0).count()
                });
                black_box(rates)
            })
        });
    }
    group.finish();
}

fn seeds(c: &mut Criterion) {
    let mut group = c.benchmark_group("node_runs_4_seeds");
    group.sample_size(10);
    let mut cfg = ExperimentConfig::new(Task::NodeGraph);
    cfg.train.epochs = 50;
    prepare(&cfg).unwrap();
    for (name, par) in ARMS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| black_box(run_grid(std::slice::from_ref(&cfg), &[0, 1, 2, 3], par, None).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, masks, seeds);
criterion_main!(benches);
