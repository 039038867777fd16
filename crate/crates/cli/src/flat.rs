//! Flat `section.key = value` experiment configs.
//!
//! ```text
//! # comment
//! task = image
//! regularizer.kind = dropgraph
//! regularizer.alpha = 0.2
//! cnn.groups = 1x8,1x16
//! ```
//!
//! `task` is read first and picks the defaults; every other key overrides
//! one field. Unknown or repeated keys are errors.

use crate::error::CliError;
use dropgraph::experiments::{ExperimentConfig, Task};
use dropgraph::regularizers::{
    AdjacencyMode, GeneratorKind, PartialGraphConfig, RegularizerConfig, RegularizerSpec, SamplingStrategy,
    SchedulerKind,
};
use std::fmt::Display;
use std::str::FromStr;

/// Regularizer fields as they appear in a config, whatever the kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerSettings {
    pub kind: String,
    pub rho: f64,
    pub alpha: f64,
    pub block_size: usize,
    pub adjacency_mode: AdjacencyMode,
    pub generator: GeneratorKind,
    pub scheduler: SchedulerKind,
    pub rescale: bool,
    pub normalize_similarity: bool,
    pub strategy: SamplingStrategy,
    pub keep_at_inference: bool,
}

impl Default for RegularizerSettings {
    fn default() -> Self {
        let d = RegularizerConfig::default();
        Self {
            kind: "none".into(),
            rho: d.rho_target,
            alpha: d.alpha,
            block_size: d.block_size,
            adjacency_mode: d.adjacency_mode,
            generator: d.generator_kind,
            scheduler: d.scheduler_kind,
            rescale: d.rescale_dropout,
            normalize_similarity: d.normalize_similarity,
            strategy: SamplingStrategy::Random,
            keep_at_inference: false,
        }
    }
}

pub const REGULARIZER_KINDS: [&str; 6] = ["none", "dropout", "spatial_dropout", "dropblock", "dropgraph", "partial_graph"];

impl RegularizerSettings {
    pub fn from_spec(spec: &RegularizerSpec) -> Self {
        let mut s = Self {
            kind: spec.name().into(),
            ..Self::default()
        };
        match *spec {
            RegularizerSpec::None => {}
            RegularizerSpec::Dropout { rho, rescale, scheduler } | RegularizerSpec::SpatialDropout { rho, rescale, scheduler } => {
                (s.rho, s.rescale, s.scheduler) = (rho, rescale, scheduler);
            }
            RegularizerSpec::DropBlock { rho, block_size, scheduler } => {
                (s.rho, s.block_size, s.scheduler) = (rho, block_size, scheduler);
            }
            RegularizerSpec::DropGraph(c) => {
                s.rho = c.rho_target;
                s.alpha = c.alpha;
                s.block_size = c.block_size;
                s.adjacency_mode = c.adjacency_mode;
                s.generator = c.generator_kind;
                s.scheduler = c.scheduler_kind;
                s.rescale = c.rescale_dropout;
                s.normalize_similarity = c.normalize_similarity;
            }
            RegularizerSpec::PartialGraph(c) => {
                (s.alpha, s.strategy, s.keep_at_inference) = (c.alpha, c.strategy, c.keep_at_inference);
            }
        }
        s
    }

    pub fn to_spec(&self) -> Result<RegularizerSpec, CliError> {
        Ok(match self.kind.as_str() {
            "none" => RegularizerSpec::None,
            "dropout" => RegularizerSpec::Dropout {
                rho: self.rho,
                rescale: self.rescale,
                scheduler: self.scheduler,
            },
            "spatial_dropout" => RegularizerSpec::SpatialDropout {
                rho: self.rho,
                rescale: self.rescale,
                scheduler: self.scheduler,
            },
            "dropblock" => RegularizerSpec::DropBlock {
                rho: self.rho,
                block_size: self.block_size,
                scheduler: self.scheduler,
            },
            "dropgraph" => RegularizerSpec::DropGraph(RegularizerConfig {
                alpha: self.alpha,
                rho_target: self.rho,
                block_size: self.block_size,
                adjacency_mode: self.adjacency_mode,
                generator_kind: self.generator,
                scheduler_kind: self.scheduler,
                rescale_dropout: self.rescale,
                normalize_similarity: self.normalize_similarity,
            }),
            "partial_graph" => RegularizerSpec::PartialGraph(PartialGraphConfig {
                alpha: self.alpha,
                strategy: self.strategy,
                keep_at_inference: self.keep_at_inference,
            }),
            other => {
                return Err(CliError::Value {
                    key: "regularizer.kind".into(),
                    reason: format!("unknown kind `{other}` ({})", REGULARIZER_KINDS.join(" | ")),
                })
            }
        })
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    raw.parse().map_err(|e: T::Err| CliError::Value {
        key: key.into(),
        reason: format!("`{raw}`: {e}"),
    })
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|v| value(key, v.trim())).collect()
}

fn groups(key: &str, raw: &str) -> Result<Vec<(usize, usize)>, CliError> {
    raw.split(',')
        .map(|g| {
            let (b, c) = g.trim().split_once('x').ok_or_else(|| CliError::Value {
                key: key.into(),
                reason: format!("`{g}` is not BLOCKSxCHANNELS"),
            })?;
            Ok((value(key, b)?, value(key, c)?))
        })
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Splits text into `(line, key, value)`.
fn entries(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        // `#` starts a comment anywhere; no value contains one
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Syntax {
            line: i + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim().to_string();
        if out.iter().any(|(_, seen, _)| *seen == k) {
            return Err(CliError::Syntax {
                line: i + 1,
                reason: format!("`{k}` is set twice"),
            });
        }
        out.push((i + 1, k, v.trim().to_string()));
    }
    Ok(out)
}

fn apply(cfg: &mut ExperimentConfig, reg: &mut RegularizerSettings, key: &str, v: &str) -> Result<(), CliError> {
    match key {
        "task" => {}
        "name" => cfg.name = v.into(),
        "seeds" => cfg.seeds = list(key, v)?,
        "out_dir" => cfg.out_dir = v.into(),

        "image.classes" => cfg.image.classes = value(key, v)?,
        "image.channels" => cfg.image.channels = value(key, v)?,
        "image.image_size" => cfg.image.image_size = value(key, v)?,
        "image.train_count" => cfg.image.train_count = value(key, v)?,
        "image.val_count" => cfg.image.val_count = value(key, v)?,
        "image.noise_std" => cfg.image.noise_std = value(key, v)?,
        "image.seed" => cfg.image.seed = value(key, v)?,

        "graph.nodes" => cfg.graph.nodes = value(key, v)?,
        "graph.communities" => cfg.graph.communities = value(key, v)?,
        "graph.p_in" => cfg.graph.p_in = value(key, v)?,
        "graph.p_out" => cfg.graph.p_out = value(key, v)?,
        "graph.labeled_per_class" => cfg.graph.labeled_per_class = value(key, v)?,
        "graph.val_per_class" => cfg.graph.val_per_class = value(key, v)?,
        "graph.features" => cfg.graph.features = value(key, v)?,
        "graph.feature_noise" => cfg.graph.feature_noise = value(key, v)?,
        "graph.seed" => cfg.graph.seed = value(key, v)?,

        "cnn.in_channels" => cfg.cnn.in_channels = value(key, v)?,
        "cnn.image_size" => cfg.cnn.image_size = value(key, v)?,
        "cnn.stem_channels" => cfg.cnn.stem_channels = value(key, v)?,
        "cnn.groups" => cfg.cnn.groups = groups(key, v)?,
        "cnn.classes" => cfg.cnn.classes = value(key, v)?,
        "cnn.regularize_groups" => cfg.cnn.regularize_groups = list(key, v)?,
        "cnn.regularize_skip" => cfg.cnn.regularize_skip = value(key, v)?,

        "gcn.in_features" => cfg.gcn.in_features = value(key, v)?,
        "gcn.hidden" => cfg.gcn.hidden = value(key, v)?,
        "gcn.classes" => cfg.gcn.classes = value(key, v)?,

        "regularizer.kind" => reg.kind = v.into(),
        "regularizer.rho" => reg.rho = value(key, v)?,
        "regularizer.alpha" => reg.alpha = value(key, v)?,
        "regularizer.block_size" => reg.block_size = value(key, v)?,
        "regularizer.adjacency_mode" => reg.adjacency_mode = value(key, v)?,
        "regularizer.generator" => reg.generator = value(key, v)?,
        "regularizer.scheduler" => reg.scheduler = value(key, v)?,
        "regularizer.rescale" => reg.rescale = value(key, v)?,
        "regularizer.normalize_similarity" => reg.normalize_similarity = value(key, v)?,
        "regularizer.strategy" => reg.strategy = value(key, v)?,
        "regularizer.keep_at_inference" => reg.keep_at_inference = value(key, v)?,

        "train.epochs" => cfg.train.epochs = value(key, v)?,
        "train.batch_size" => cfg.train.batch_size = value(key, v)?,
        "train.lr" => cfg.train.lr = value(key, v)?,
        "train.momentum" => cfg.train.momentum = value(key, v)?,
        "train.weight_decay" => cfg.train.weight_decay = value(key, v)?,
        "train.lr_milestones" => cfg.train.lr_milestones = list(key, v)?,
        "train.lr_decay" => cfg.train.lr_decay = value(key, v)?,
        "train.flip" => cfg.train.flip = value(key, v)?,
        "train.eval_every" => cfg.train.eval_every = value(key, v)?,
        _ => {
            return Err(CliError::Value {
                key: key.into(),
                reason: "unknown key".into(),
            })
        }
    }
    Ok(())
}

/// Parses and fully validates a config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let entries = entries(text)?;
    let task = match entries.iter().find(|(_, k, _)| k == "task") {
        Some((_, k, v)) => value::<Task>(k, v)?,
        None => Task::Image,
    };
    let mut cfg = ExperimentConfig::new(task);
    let mut reg = RegularizerSettings::default();
    for (_, k, v) in &entries {
        apply(&mut cfg, &mut reg, k, v)?;
    }
    cfg.regularizer = reg.to_spec()?;
    cfg.validate()?;
    Ok(cfg)
}

/// Every key, in a fixed order; [`parse_config`] reads it back unchanged.
pub fn to_text(cfg: &ExperimentConfig) -> String {
    let r = RegularizerSettings::from_spec(&cfg.regularizer);
    let mut m: Vec<(&str, String)> = vec![
        ("task", cfg.task.to_string()),
        ("name", cfg.name.clone()),
        ("seeds", join(&cfg.seeds)),
        ("out_dir", cfg.out_dir.clone()),
    ];
    let i = &cfg.image;
    m.extend([
        ("image.classes", i.classes.to_string()),
        ("image.channels", i.channels.to_string()),
        ("image.image_size", i.image_size.to_string()),
        ("image.train_count", i.train_count.to_string()),
        ("image.val_count", i.val_count.to_string()),
        ("image.noise_std", i.noise_std.to_string()),
        ("image.seed", i.seed.to_string()),
    ]);
    let g = &cfg.graph;
    m.extend([
        ("graph.nodes", g.nodes.to_string()),
        ("graph.communities", g.communities.to_string()),
        ("graph.p_in", g.p_in.to_string()),
        ("graph.p_out", g.p_out.to_string()),
        ("graph.labeled_per_class", g.labeled_per_class.to_string()),
        ("graph.val_per_class", g.val_per_class.to_string()),
        ("graph.features", g.features.to_string()),
        ("graph.feature_noise", g.feature_noise.to_string()),
        ("graph.seed", g.seed.to_string()),
    ]);
    let c = &cfg.cnn;
    m.extend([
        ("cnn.in_channels", c.in_channels.to_string()),
        ("cnn.image_size", c.image_size.to_string()),
        ("cnn.stem_channels", c.stem_channels.to_string()),
        (
            "cnn.groups",
            c.groups.iter().map(|(b, ch)| format!("{b}x{ch}")).collect::<Vec<_>>().join(","),
        ),
        ("cnn.classes", c.classes.to_string()),
        ("cnn.regularize_groups", join(&c.regularize_groups)),
        ("cnn.regularize_skip", c.regularize_skip.to_string()),
        ("gcn.in_features", cfg.gcn.in_features.to_string()),
        ("gcn.hidden", cfg.gcn.hidden.to_string()),
        ("gcn.classes", cfg.gcn.classes.to_string()),
    ]);
    m.extend([
        ("regularizer.kind", r.kind.clone()),
        ("regularizer.rho", r.rho.to_string()),
        ("regularizer.alpha", r.alpha.to_string()),
        ("regularizer.block_size", r.block_size.to_string()),
        ("regularizer.adjacency_mode", r.adjacency_mode.to_string()),
        ("regularizer.generator", r.generator.to_string()),
        ("regularizer.scheduler", r.scheduler.to_string()),
        ("regularizer.rescale", r.rescale.to_string()),
        ("regularizer.normalize_similarity", r.normalize_similarity.to_string()),
        ("regularizer.strategy", r.strategy.to_string()),
        ("regularizer.keep_at_inference", r.keep_at_inference.to_string()),
    ]);
    let t = &cfg.train;
    m.extend([
        ("train.epochs", t.epochs.to_string()),
        ("train.batch_size", t.batch_size.to_string()),
        ("train.lr", t.lr.to_string()),
        ("train.momentum", t.momentum.to_string()),
        ("train.weight_decay", t.weight_decay.to_string()),
        ("train.lr_milestones", join(&t.lr_milestones)),
        ("train.lr_decay", t.lr_decay.to_string()),
        ("train.flip", t.flip.to_string()),
        ("train.eval_every", t.eval_every.to_string()),
    ]);
    let mut out = String::new();
    let mut section = "";
    for (k, v) in m {
        let s = k.split_once('.').map_or("", |(s, _)| s);
        if s != section {
            out.push('\n');
            section = s;
        }
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

/// `--axis` names and the regularizer kinds each applies to.
pub const SWEEP_AXES: [(&str, &[&str]); 4] = [
    ("alpha", &["dropgraph", "partial_graph"]),
    ("rho", &["dropout", "spatial_dropout", "dropblock", "dropgraph"]),
    ("adjacency_mode", &["dropgraph"]),
    ("scheduler", &["dropout", "spatial_dropout", "dropblock", "dropgraph"]),
];

/// `cfg` with `regularizer.<axis> = value`, re-validated.
pub fn with_axis_value(cfg: &ExperimentConfig, axis: &str, value: &str) -> Result<ExperimentConfig, CliError> {
    let kind = cfg.regularizer.name();
    let (_, kinds) = SWEEP_AXES.iter().find(|(a, _)| *a == axis).ok_or_else(|| CliError::Value {
        key: "--axis".into(),
        reason: format!("unknown axis `{axis}` (alpha | rho | adjacency_mode | scheduler)"),
    })?;
    if !kinds.contains(&kind) {
        return Err(CliError::Value {
            key: "--axis".into(),
            reason: format!("axis `{axis}` does not apply to regularizer kind `{kind}`"),
        });
    }
    let key = format!("regularizer.{axis}");
    let text: String = to_text(cfg)
        .lines()
        .map(|l| match l.split_once('=') {
            Some((k, _)) if k.trim() == key => format!("{key} = {value}\n"),
            _ => format!("{l}\n"),
        })
        .collect();
    let mut out = parse_config(&text)?;
    out.name = format!("{axis}={value}");
    Ok(out)
}
