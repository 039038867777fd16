use super::data::{SbmGraphSpec, SyntheticImageSpec};
use crate::backbones::{TinyResNetConfig, TwoLayerGcnConfig};
use crate::error::{Error, Result};
use crate::regularizers::RegularizerSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Image,
    NodeGraph,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Image => "image",
            Task::NodeGraph => "node_graph",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "image" => Ok(Task::Image),
            "node_graph" => Ok(Task::NodeGraph),
            other => Err(format!("unknown task `{other}` (image | node_graph)")),
        }
    }
}

/// SGD with momentum and a two-step learning-rate decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Ignored by the node task, which trains full-batch.
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `epochs` at which the rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub lr_decay: f64,
    pub flip: bool,
    /// Evaluate every this many epochs (the last epoch always is).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: vec![0.6, 0.85],
            lr_decay: 0.1,
            flip: true,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn node_graph() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            flip: false,
            ..Self::default()
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_milestones
            .iter()
            .filter(|&&m| epoch as f64 >= m * self.epochs as f64)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("{} is not a finite non-negative rate", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::config("train.lr_milestones", "fractions must lie in [0, 1]"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub image: SyntheticImageSpec,
    pub cnn: TinyResNetConfig,
    pub graph: SbmGraphSpec,
    pub gcn: TwoLayerGcnConfig,
    pub regularizer: RegularizerSpec,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out_dir: String,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            name: "baseline".into(),
            task,
            image: SyntheticImageSpec::default(),
            cnn: TinyResNetConfig::default(),
            graph: SbmGraphSpec::default(),
            gcn: TwoLayerGcnConfig {
                in_features: SbmGraphSpec::default().features,
                hidden: 16,
                classes: SbmGraphSpec::default().communities,
            },
            regularizer: RegularizerSpec::None,
            train: match task {
                Task::Image => TrainConfig::default(),
                Task::NodeGraph => TrainConfig::node_graph(),
            },
            seeds: vec![0, 1, 2],
            out_dir: "out".into(),
        }
    }

    /// Single-core image preset used by the acceptance experiments: 16 px
    /// images, an 8/16-channel net with one block per group and the
    /// regularizer in both groups.
    pub fn desk_image() -> Self {
        let mut c = Self::new(Task::Image);
        c.name = "desk_image".into();
        c.image.image_size = 16;
        c.image.val_count = 1024;
        c.image.noise_std = 1.5;
        c.cnn.image_size = 16;
        c.cnn.stem_channels = 8;
        c.cnn.groups = vec![(1, 8), (1, 16)];
        c.cnn.regularize_groups = vec![0, 1];
        c.train.eval_every = 20;
        c
    }

    /// Checks every section and the couplings between data and model.
    /// Field names in errors are the dotted config keys.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.regularizer.validate().map_err(in_section("regularizer"))?;
        match self.task {
            Task::Image => {
                self.image.validate()?;
                self.cnn.validate().map_err(in_section("cnn"))?;
                if self.cnn.in_channels != self.image.channels || self.cnn.image_size != self.image.image_size {
                    return Err(Error::config("cnn.image_size", "model input must match data channels and size"));
                }
                if self.cnn.classes != self.image.classes {
                    return Err(Error::config("cnn.classes", "must equal image.classes"));
                }
                if let RegularizerSpec::DropGraph(rc) = self.regularizer {
                    for &g in &self.cnn.regularize_groups {
                        let s = self.cnn.group_size(g);
                        rc.validate_at(self.cnn.groups[g].1, s, s).map_err(in_section("regularizer"))?;
                    }
                }
                if let RegularizerSpec::DropBlock { block_size, .. } = self.regularizer {
                    if let Some(&g) = self.cnn.regularize_groups.iter().find(|&&g| self.cnn.group_size(g) < block_size) {
                        return Err(Error::config("regularizer.block_size", format!("exceeds group {g}'s feature map")));
                    }
                }
            }
            Task::NodeGraph => {
                self.graph.validate()?;
                self.gcn.validate().map_err(in_section("gcn"))?;
                if self.gcn.in_features != self.graph.features || self.gcn.classes != self.graph.communities {
                    return Err(Error::config("gcn.in_features", "must match graph features and communities"));
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// SHA-256 over everything that affects results (not name, seeds or
    /// output directory).
    pub fn hash(&self) -> String {
        let key = Self {
            name: String::new(),
            seeds: Vec::new(),
            out_dir: String::new(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&key).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Prefixes bare field names with their config section.
fn in_section(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config { field, reason } if !field.contains('.') => Error::Config {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}
