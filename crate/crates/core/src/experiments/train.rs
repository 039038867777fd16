//! The SGD loop for both tasks.

use super::config::{ExperimentConfig, Task, TrainConfig};
use super::data::{gen_images, gen_sbm, read_dataset, write_dataset, ImageDataset, ImageSplit};
use super::record::{EpochRecord, RunRecord, RunStatus};
use crate::backbones::{GraphInstance, Pass, TinyResNet, TwoLayerGcn};
use crate::error::{Error, Result};
use crate::nn::{accuracy, cross_entropy, ParamStore};
use crate::parallel::Parallelism;
use crate::regularizers::{schedule_rho, Progress, RegularizerSpec};
use crate::rng::{site, RngStream};
use crate::tensor::{Tape, Tensor};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

/// `v ← m·v + (g + λ·w)`, `w ← w − lr·v`.
pub fn sgd_step(store: &mut ParamStore, lr: f64, momentum: f64, weight_decay: f64) {
    for p in store.iter_mut() {
        let (w, g, v) = (p.value.data_mut(), p.grad.data(), p.velocity.data_mut());
        for i in 0..w.len() {
            v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
            w[i] -= lr * v[i];
        }
    }
}

fn scheduled_rho(spec: &RegularizerSpec, step: usize, total: usize) -> Result<f64> {
    match spec.rho_schedule() {
        Some((rho, kind)) => schedule_rho(&Progress { step, total_steps: total }.scheduler(kind, rho)),
        None => Ok(0.0),
    }
}

/// Mean loss and accuracy (percent) of an eval-mode pass.
pub fn evaluate_images(net: &mut TinyResNet, split: &ImageSplit, par: Parallelism) -> Result<(f64, f64)> {
    let pass = Pass::eval().with_parallelism(par);
    let (mut loss, mut hits) = (0.0, 0.0);
    let all: Vec<usize> = (0..split.len()).collect();
    for chunk in all.chunks(128) {
        let (x, y) = split.batch(chunk, None);
        let tape = Tape::new();
        let p = net.store.bind(&tape, false);
        let logits = net.forward(&tape.constant(x), &p, &pass)?;
        loss += cross_entropy(&logits, &y)?.value().item() * chunk.len() as f64;
        hits += accuracy(&logits.value(), &y) * chunk.len() as f64;
    }
    let n = split.len() as f64;
    Ok((loss / n, 100.0 * hits / n))
}

fn shuffled(n: usize, stream: &RngStream) -> Vec<usize> {
    let mut rng = stream.rng();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    idx
}

fn finish(
    cfg: &ExperimentConfig,
    seed: u64,
    status: RunStatus,
    epochs: Vec<EpochRecord>,
    test_acc: Option<f64>,
    started: Instant,
) -> RunRecord {
    let last = epochs.iter().rev().find(|e| e.val_acc.is_some());
    let train = last.and_then(|e| e.train_acc).unwrap_or(f64::NAN);
    let val = last.and_then(|e| e.val_acc).unwrap_or(f64::NAN);
    let val_loss = last.and_then(|e| e.val_loss).unwrap_or(f64::NAN);
    RunRecord {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed,
        status,
        epochs,
        final_train_acc: train,
        final_val_acc: val,
        final_val_loss: val_loss,
        final_test_acc: test_acc,
        generalization_gap: train - val,
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Trains a fresh CNN on `data` from `seed`. Divergence ends the run early
/// with [`RunStatus::Diverged`] rather than an error.
pub fn train_image(cfg: &ExperimentConfig, data: &ImageDataset, seed: u64, par: Parallelism) -> Result<RunRecord> {
    let started = Instant::now();
    let t: &TrainConfig = &cfg.train;
    let root = RngStream::new(seed);
    let mut net = TinyResNet::new(cfg.cnn.clone(), cfg.regularizer, &root)?;
    let n = data.train.len();
    let per_epoch = n.div_ceil(t.batch_size);
    let total = t.epochs * per_epoch;
    let mut epochs = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let lr = t.lr_at(epoch);
        let order = shuffled(n, &root.child(site::SHUFFLE).child(epoch as u64));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(t.batch_size).enumerate() {
            let step = epoch * per_epoch + b;
            let flips: Option<Vec<bool>> = t.flip.then(|| {
                let mut rng = root.child(site::AUGMENT).child(step as u64).rng();
                idx.iter().map(|_| rng.random::<bool>()).collect()
            });
            let (x, y) = data.train.batch(idx, flips.as_deref());
            let tape = Tape::new();
            let p = net.store.bind(&tape, true);
            let pass = Pass::train(
                Progress { step, total_steps: total },
                root.child(site::TRAIN).child(step as u64),
            )
            .with_parallelism(par);
            let logits = net.forward(&tape.constant(x), &p, &pass)?;
            let loss = cross_entropy(&logits, &y)?;
            let lv = loss.value().item();
            if !lv.is_finite() {
                return Ok(finish(cfg, seed, RunStatus::Diverged { epoch, step }, epochs, None, started));
            }
            loss_sum += lv;
            tape.backward(loss)?;
            net.store.zero_grads();
            net.store.accumulate_grads(&p);
            sgd_step(&mut net.store, lr, t.momentum, t.weight_decay);
        }
        let evaluate = (epoch + 1) % t.eval_every == 0 || epoch + 1 == t.epochs;
        let (train_acc, val_loss, val_acc) = if evaluate {
            let (_, train_acc) = evaluate_images(&mut net, &data.train, par)?;
            let (vl, va) = evaluate_images(&mut net, &data.val, par)?;
            (Some(train_acc), Some(vl), Some(va))
        } else {
            (None, None, None)
        };
        epochs.push(EpochRecord {
            epoch,
            lr,
            rho_start: scheduled_rho(&cfg.regularizer, epoch * per_epoch, total)?,
            rho_end: scheduled_rho(&cfg.regularizer, (epoch + 1) * per_epoch, total)?,
            train_loss: loss_sum / per_epoch as f64,
            train_acc,
            val_loss,
            val_acc,
        });
    }
    Ok(finish(cfg, seed, RunStatus::Completed, epochs, None, started))
}

fn rows(logits: &Tensor, nodes: &[usize]) -> Tensor {
    let k = logits.shape()[1];
    Tensor::new(
        &[nodes.len(), k],
        nodes.iter().flat_map(|&i| logits.data()[i * k..(i + 1) * k].iter().copied()).collect(),
    )
    .expect("row shape")
}

fn node_metrics(logits: &Tensor, g: &GraphInstance, nodes: &[usize]) -> Result<(f64, f64)> {
    let tape = Tape::new();
    let sub = rows(logits, nodes);
    let labels: Vec<usize> = nodes.iter().map(|&i| g.labels[i]).collect();
    let loss = cross_entropy(&tape.constant(sub.clone()), &labels)?.value().item();
    Ok((loss, 100.0 * accuracy(&sub, &labels)))
}

/// Full-batch GCN training; one step per epoch.
pub fn train_graph(cfg: &ExperimentConfig, g: &GraphInstance, seed: u64) -> Result<RunRecord> {
    let started = Instant::now();
    let t = &cfg.train;
    let root = RngStream::new(seed);
    let mut net = TwoLayerGcn::new(cfg.gcn, g.nodes(), cfg.regularizer, &root)?;
    let k = cfg.gcn.classes;
    let flat: Vec<usize> = g.train.iter().flat_map(|&i| (0..k).map(move |c| i * k + c)).collect();
    let labels: Vec<usize> = g.train.iter().map(|&i| g.labels[i]).collect();
    let mut epochs = Vec::with_capacity(t.epochs);
    for epoch in 0..t.epochs {
        let lr = t.lr_at(epoch);
        let tape = Tape::new();
        let p = net.store.bind(&tape, true);
        let pass = Pass::train(
            Progress {
                step: epoch,
                total_steps: t.epochs,
            },
            root.child(site::TRAIN).child(epoch as u64),
        );
        let logits = net.forward(g, &p, &pass)?;
        let loss = cross_entropy(&logits.gather(flat.clone(), &[g.train.len(), k])?, &labels)?;
        let lv = loss.value().item();
        if !lv.is_finite() {
            return Ok(finish(cfg, seed, RunStatus::Diverged { epoch, step: epoch }, epochs, None, started));
        }
        tape.backward(loss)?;
        net.store.zero_grads();
        net.store.accumulate_grads(&p);
        sgd_step(&mut net.store, lr, t.momentum, t.weight_decay);

        let evaluate = (epoch + 1) % t.eval_every == 0 || epoch + 1 == t.epochs;
        let (train_acc, val_loss, val_acc) = if evaluate {
            let tape = Tape::new();
            let logits = net.forward(g, &net.store.bind(&tape, false), &Pass::eval())?.value();
            let (_, ta) = node_metrics(&logits, g, &g.train)?;
            let (vl, va) = node_metrics(&logits, g, &g.val)?;
            (Some(ta), Some(vl), Some(va))
        } else {
            (None, None, None)
        };
        epochs.push(EpochRecord {
            epoch,
            lr,
            rho_start: scheduled_rho(&cfg.regularizer, epoch, t.epochs)?,
            rho_end: scheduled_rho(&cfg.regularizer, epoch + 1, t.epochs)?,
            train_loss: lv,
            train_acc,
            val_loss,
            val_acc,
        });
    }
    let tape = Tape::new();
    let logits = net.forward(g, &net.store.bind(&tape, false), &Pass::eval())?.value();
    let test = node_metrics(&logits, g, &g.test)?.1;
    Ok(finish(cfg, seed, RunStatus::Completed, epochs, Some(test), started))
}

/// Data shared by every seed of a config.
#[derive(Clone, Debug)]
pub enum Prepared {
    Image(ImageDataset),
    Graph(GraphInstance),
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    prepare_cached(cfg, None)
}

/// Like [`prepare`], but image datasets are read from (or written to)
/// `cache_dir/images-<spec hash>.bin`. A cached file whose spec differs
/// is regenerated.
pub fn prepare_cached(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Prepared> {
    cfg.validate()?;
    Ok(match (cfg.task, cache_dir) {
        (Task::Image, Some(dir)) => {
            let key = serde_json::to_vec(&cfg.image).expect("spec serializes");
            let hash: String = Sha256::digest(&key).iter().take(8).map(|b| format!("{b:02x}")).collect();
            let path = dir.join(format!("images-{hash}.bin"));
            let cached = File::open(&path)
                .ok()
                .and_then(|f| read_dataset(BufReader::new(f)).ok())
                .filter(|d| d.spec == cfg.image);
            match cached {
                Some(d) => Prepared::Image(d),
                None => {
                    let d = gen_images(&cfg.image)?;
                    std::fs::create_dir_all(dir)?;
                    write_dataset(BufWriter::new(File::create(&path)?), &d)?;
                    Prepared::Image(d)
                }
            }
        }
        (Task::Image, None) => Prepared::Image(gen_images(&cfg.image)?),
        (Task::NodeGraph, _) => Prepared::Graph(gen_sbm(&cfg.graph)?),
    })
}

pub fn run_one(cfg: &ExperimentConfig, data: &Prepared, seed: u64, par: Parallelism) -> Result<RunRecord> {
    match (cfg.task, data) {
        (Task::Image, Prepared::Image(d)) => train_image(cfg, d, seed, par),
        (Task::NodeGraph, Prepared::Graph(g)) => train_graph(cfg, g, seed),
        _ => Err(Error::Contract(format!("prepared data does not match task {}", cfg.task))),
    }
}
