//! Synthetic datasets: pattern images and stochastic block model graphs.

use crate::backbones::{normalized_adjacency, GraphInstance};
use crate::error::{Error, Result};
use crate::rng::{site, RngStream};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Pattern family per class, in class order.
pub const PATTERN_FAMILIES: [&str; 4] = ["gratings", "blobs", "checkers", "rings"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticImageSpec {
    pub classes: usize,
    pub channels: usize,
    pub image_size: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticImageSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            channels: 3,
            image_size: 32,
            train_count: 512,
            val_count: 2048,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticImageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=PATTERN_FAMILIES.len()).contains(&self.classes) {
            return Err(Error::config("image.classes", format!("{} outside 2..=4", self.classes)));
        }
        if self.image_size < 8 {
            return Err(Error::config("image.image_size", format!("{} is below 8", self.image_size)));
        }
        if self.channels == 0 {
            return Err(Error::config("image.channels", "must be positive"));
        }
        if self.train_count < self.classes || self.val_count < self.classes {
            return Err(Error::config("image.train_count", "need at least one sample per class in each split"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("image.noise_std", format!("{} is not a finite non-negative value", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSplit {
    /// `(N, C, S, S)`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl ImageSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the listed samples into a batch, mirroring those flagged in `flip`.
    pub fn batch(&self, indices: &[usize], flip: Option<&[bool]>) -> (Tensor, Vec<usize>) {
        let shape = self.images.shape();
        let (c, s) = (shape[1], shape[2]);
        let per = c * s * s;
        let mut data = Vec::with_capacity(indices.len() * per);
        for (k, &i) in indices.iter().enumerate() {
            let src = &self.images.data()[i * per..(i + 1) * per];
            if flip.is_some_and(|f| f[k]) {
                for row in src.chunks_exact(s) {
                    data.extend(row.iter().rev());
                }
            } else {
                data.extend_from_slice(src);
            }
        }
        let t = Tensor::new(&[indices.len(), c, s, s], data).expect("batch shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub spec: SyntheticImageSpec,
    pub train: ImageSplit,
    pub val: ImageSplit,
}

/// One noiseless pattern in roughly `[-1, 1]`, latents drawn from `rng`.
fn pattern(family: usize, s: usize, rng: &mut impl Rng) -> Vec<f64> {
    let coords = move |i: usize| ((i % s) as f64 + 0.5) / s as f64;
    let row = move |i: usize| ((i / s) as f64 + 0.5) / s as f64;
    let n = s * s;
    match family {
        0 => {
            let theta = rng.random_range(0.0..PI);
            let freq = rng.random_range(2.0..4.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let (c, si) = (theta.cos(), theta.sin());
            (0..n).map(|i| (2.0 * PI * freq * (coords(i) * c + row(i) * si) + phase).sin()).collect()
        }
        1 => {
            let count = rng.random_range(1..=3);
            let blobs: Vec<(f64, f64, f64)> = (0..count)
                .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85), rng.random_range(0.08..0.16)))
                .collect();
            (0..n)
                .map(|i| {
                    let v: f64 = blobs
                        .iter()
                        .map(|&(cx, cy, sd)| (-((coords(i) - cx).powi(2) + (row(i) - cy).powi(2)) / (2.0 * sd * sd)).exp())
                        .sum();
                    2.0 * v.min(1.0) - 1.0
                })
                .collect()
        }
        2 => {
            let cells = rng.random_range(2.0..4.0);
            let (px, py) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            (0..n)
                .map(|i| {
                    let a = ((coords(i) * cells + px).floor() + (row(i) * cells + py).floor()) as i64;
                    if a % 2 == 0 { 1.0 } else { -1.0 }
                })
                .collect()
        }
        _ => {
            let (cx, cy) = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
            let freq = rng.random_range(2.0..4.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| (2.0 * PI * freq * ((coords(i) - cx).hypot(row(i) - cy)) + phase).sin())
                .collect()
        }
    }
}

fn gen_split(spec: &SyntheticImageSpec, count: usize, stream: &RngStream) -> (Vec<f64>, Vec<usize>) {
    let (c, s) = (spec.channels, spec.image_size);
    let mut data = Vec::with_capacity(count * c * s * s);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % spec.classes;
        let mut rng = stream.child(i as u64).rng();
        let base = pattern(label, s, &mut rng);
        for _ in 0..c {
            let gain = rng.random_range(0.5..1.5);
            for &b in &base {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(gain * b + spec.noise_std * noise);
            }
        }
        labels.push(label);
    }
    (data, labels)
}

/// Class-balanced pattern images, normalized per channel with train-split
/// statistics. Deterministic in `spec`.
pub fn gen_images(spec: &SyntheticImageSpec) -> Result<ImageDataset> {
    spec.validate()?;
    let root = RngStream::new(spec.seed).child(site::DATA);
    let (mut train, train_labels) = gen_split(spec, spec.train_count, &root.child(0));
    let (mut val, val_labels) = gen_split(spec, spec.val_count, &root.child(1));
    let (c, s) = (spec.channels, spec.image_size);
    let hw = s * s;
    for ch in 0..c {
        let vals = || train.chunks_exact(hw).skip(ch).step_by(c).flatten();
        let n = (spec.train_count * hw) as f64;
        let mean = vals().sum::<f64>() / n;
        let std = (vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
        for buf in [&mut train, &mut val] {
            for plane in buf.chunks_exact_mut(hw).skip(ch).step_by(c) {
                plane.iter_mut().for_each(|v| *v = (*v - mean) / std);
            }
        }
    }
    Ok(ImageDataset {
        spec: spec.clone(),
        train: ImageSplit {
            images: Tensor::new(&[spec.train_count, c, s, s], train)?,
            labels: train_labels,
        },
        val: ImageSplit {
            images: Tensor::new(&[spec.val_count, c, s, s], val)?,
            labels: val_labels,
        },
    })
}

const DATASET_MAGIC: &[u8; 8] = b"DGRAPHDS";
const DATASET_VERSION: u32 = 1;

/// Cache layout, little-endian:
///
/// ```text
/// magic "DGRAPHDS", version u32, spec_len u32, spec (JSON, UTF-8),
/// then train and val as: count u32, labels u32 × count, values f64 × count·C·S·S
/// ```
pub fn write_dataset<W: Write>(mut out: W, ds: &ImageDataset) -> Result<()> {
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    let spec = serde_json::to_vec(&ds.spec).map_err(|e| Error::Format {
        what: "dataset cache",
        reason: e.to_string(),
    })?;
    out.write_all(&(spec.len() as u32).to_le_bytes())?;
    out.write_all(&spec)?;
    for split in [&ds.train, &ds.val] {
        out.write_all(&(split.len() as u32).to_le_bytes())?;
        for &l in &split.labels {
            out.write_all(&(l as u32).to_le_bytes())?;
        }
        for v in split.images.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<ImageDataset> {
    let bad = |reason: &str| Error::Format {
        what: "dataset cache",
        reason: reason.to_string(),
    };
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = buf.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != DATASET_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    if u32_at(take(4)?) != DATASET_VERSION {
        return Err(bad("unsupported version"));
    }
    let len = u32_at(take(4)?) as usize;
    let spec: SyntheticImageSpec = serde_json::from_slice(take(len)?).map_err(|e| bad(&e.to_string()))?;
    let (c, s) = (spec.channels, spec.image_size);
    let mut splits = Vec::new();
    for _ in 0..2 {
        let n = u32_at(take(4)?) as usize;
        let labels = (0..n).map(|_| take(4).map(|b| u32_at(b) as usize)).collect::<Result<Vec<_>>>()?;
        let values = (0..n * c * s * s)
            .map(|_| take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        splits.push(ImageSplit {
            images: Tensor::new(&[n, c, s, s], values)?,
            labels,
        });
    }
    if pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    let val = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok(ImageDataset { spec, train, val })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmGraphSpec {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub labeled_per_class: usize,
    /// Nodes per class held out for validation; the rest is test.
    pub val_per_class: usize,
    pub features: usize,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmGraphSpec {
    fn default() -> Self {
        Self {
            nodes: 300,
            communities: 3,
            p_in: 0.08,
            p_out: 0.01,
            labeled_per_class: 20,
            val_per_class: 30,
            features: 16,
            feature_noise: 5.0,
            seed: 0,
        }
    }
}

impl SbmGraphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 {
            return Err(Error::config("graph.communities", "need at least two communities"));
        }
        let probs_ok = (0.0..=1.0).contains(&self.p_in) && (0.0..=1.0).contains(&self.p_out);
        if !probs_ok || self.p_in <= self.p_out {
            return Err(Error::config(
                "graph.p_in",
                format!("need 0 <= p_out < p_in <= 1, got p_in={} p_out={}", self.p_in, self.p_out),
            ));
        }
        if (self.labeled_per_class + self.val_per_class) * self.communities >= self.nodes {
            return Err(Error::config("graph.labeled_per_class", "labeled and val nodes leave no test nodes"));
        }
        if self.features == 0 || !(self.feature_noise >= 0.0) {
            return Err(Error::config("graph.features", "need features > 0 and feature_noise >= 0"));
        }
        Ok(())
    }
}

/// Planted-partition graph; node `i` is in community `i % communities`.
/// Features are a per-community mean direction plus Gaussian noise.
pub fn gen_sbm(spec: &SbmGraphSpec) -> Result<GraphInstance> {
    spec.validate()?;
    let root = RngStream::new(spec.seed).child(site::DATA);
    let (n, k, f) = (spec.nodes, spec.communities, spec.features);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();

    let mut rng = root.child(0).rng();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut rng = root.child(1).rng();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..k).map(|_| (0..f).map(|_| unit.sample(&mut rng)).collect()).collect();
    let mut feats = Vec::with_capacity(n * f);
    for &l in &labels {
        for m in &means[l] {
            feats.push(m + spec.feature_noise * unit.sample(&mut rng));
        }
    }

    // per-class shuffle decides who is labeled, validated or tested
    let mut rng = root.child(2).rng();
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..k {
        let mut members: Vec<usize> = (c..n).step_by(k).collect();
        for i in (1..members.len()).rev() {
            members.swap(i, rng.random_range(0..=i));
        }
        let (a, b) = (spec.labeled_per_class, spec.labeled_per_class + spec.val_per_class);
        train.extend_from_slice(&members[..a]);
        val.extend_from_slice(&members[a..b]);
        test.extend_from_slice(&members[b..]);
    }
    for v in [&mut train, &mut val, &mut test] {
        v.sort_unstable();
    }
    let g = GraphInstance {
        node_features: Tensor::new(&[n, f], feats)?,
        normalized_adjacency: normalized_adjacency(n, &edges)?,
        labels,
        train,
        val,
        test,
    };
    g.validate()?;
    Ok(g)
}
