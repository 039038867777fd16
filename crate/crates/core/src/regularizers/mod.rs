//! Dropout baselines, block masks and graph-generated distortions.

mod adjacency;
mod apply;
mod dropgraph;
mod dropout;
mod generator;
mod mask;
mod partial;
mod schedule;
mod vertices;

pub use adjacency::{build_adjacency, eq6_adjacency, resize_learned, similarity, AdjacencyMatrix, AdjacencyMode};
pub use apply::{draw_multipliers, expand_apply, pool_expand_apply};
pub use dropgraph::{DropGraph, DropGraphOutput};
pub use dropout::{dropout, spatial_dropout};
pub use generator::{distortion_generator_alt, distortion_generator_graph, GeneratorKind, GraphGeneratorParams};
pub use mask::{
    calibrated_gamma, dropblock_gamma, expected_drop_rate, sample_block_mask, sample_block_masks, DropMask,
};
pub use partial::{PartialGraph, PartialGraphConfig};
pub use schedule::{schedule_rho, Progress, SchedulerKind, SchedulerState};
pub use vertices::{
    activation_scores, gather_vertices, sample_positions, sample_vertices, top_positions, SamplingStrategy,
    VertexSet,
};

use crate::error::{Error, Result};
use crate::nn::{Bound, ParamStore};
use crate::rng::{site, RngStream};
use crate::tensor::Var;
use serde::{Deserialize, Serialize};

/// Regularizers act only in `Train`; `Eval` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    /// Vertex sampling ratio α.
    pub alpha: f64,
    /// Final distortion probability ρ.
    pub rho_target: f64,
    /// Side of the dropped squares.
    pub block_size: usize,
    pub adjacency_mode: AdjacencyMode,
    pub generator_kind: GeneratorKind,
    pub scheduler_kind: SchedulerKind,
    /// Scale kept values by `1/(1-ρ)` in the dropout baselines.
    pub rescale_dropout: bool,
    /// Dot products on L2-normalized vertices.
    pub normalize_similarity: bool,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            rho_target: 0.1,
            block_size: 3,
            adjacency_mode: AdjacencyMode::Eq6,
            generator_kind: GeneratorKind::Graph,
            scheduler_kind: SchedulerKind::F1,
            rescale_dropout: false,
            normalize_similarity: false,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.rho_target) {
            return Err(Error::config("rho", format!("{} outside [0, 1)", self.rho_target)));
        }
        if self.block_size == 0 || self.block_size.is_multiple_of(2) {
            return Err(Error::config(
                "block_size",
                format!("{} must be an odd positive integer", self.block_size),
            ));
        }
        Ok(())
    }

    /// Also checks the insertion point: block must fit, channels must split
    /// into the 4× bottleneck.
    pub fn validate_at(&self, channels: usize, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        if self.block_size > h.min(w) {
            return Err(Error::config(
                "block_size",
                format!("{} exceeds the {h}x{w} feature map", self.block_size),
            ));
        }
        if self.generator_kind == GeneratorKind::Graph && !channels.is_multiple_of(4) {
            return Err(Error::config(
                "channels",
                format!("{channels} channels are not divisible by 4"),
            ));
        }
        Ok(())
    }
}

/// What sits at one insertion point of a backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerSpec {
    None,
    Dropout {
        rho: f64,
        rescale: bool,
        scheduler: SchedulerKind,
    },
    SpatialDropout {
        rho: f64,
        rescale: bool,
        scheduler: SchedulerKind,
    },
    /// Block masking with zeros in the dropped cells.
    DropBlock {
        rho: f64,
        block_size: usize,
        scheduler: SchedulerKind,
    },
    DropGraph(RegularizerConfig),
    PartialGraph(PartialGraphConfig),
}

impl RegularizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RegularizerSpec::None => "none",
            RegularizerSpec::Dropout { .. } => "dropout",
            RegularizerSpec::SpatialDropout { .. } => "spatial_dropout",
            RegularizerSpec::DropBlock { .. } => "dropblock",
            RegularizerSpec::DropGraph(_) => "dropgraph",
            RegularizerSpec::PartialGraph(_) => "partial_graph",
        }
    }

    /// Target ρ and its ramp, for the ρ-driven kinds.
    pub fn rho_schedule(&self) -> Option<(f64, SchedulerKind)> {
        match *self {
            RegularizerSpec::Dropout { rho, scheduler, .. }
            | RegularizerSpec::SpatialDropout { rho, scheduler, .. }
            | RegularizerSpec::DropBlock { rho, scheduler, .. } => Some((rho, scheduler)),
            RegularizerSpec::DropGraph(cfg) => Some((cfg.rho_target, cfg.scheduler_kind)),
            RegularizerSpec::None | RegularizerSpec::PartialGraph(_) => None,
        }
    }

    /// Config that drives the mask-and-distort path, if this kind uses it.
    fn dropgraph_config(&self) -> Option<RegularizerConfig> {
        match *self {
            RegularizerSpec::DropGraph(cfg) => Some(cfg),
            RegularizerSpec::DropBlock {
                rho,
                block_size,
                scheduler,
            } => Some(RegularizerConfig {
                rho_target: rho,
                block_size,
                generator_kind: GeneratorKind::None,
                scheduler_kind: scheduler,
                ..Default::default()
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerSpec::Dropout { rho, .. } | RegularizerSpec::SpatialDropout { rho, .. } => {
                if !(0.0..1.0).contains(&rho) {
                    return Err(Error::config("rho", format!("{rho} outside [0, 1)")));
                }
                Ok(())
            }
            RegularizerSpec::PartialGraph(cfg) => {
                if !(0.0..=1.0).contains(&cfg.alpha) {
                    return Err(Error::config("alpha", format!("{} outside [0, 1]", cfg.alpha)));
                }
                Ok(())
            }
            RegularizerSpec::None => Ok(()),
            _ => self.dropgraph_config().expect("mask kinds").validate(),
        }
    }
}

/// A regularizer instance bound to one insertion point.
#[derive(Clone, Debug)]
pub struct Regularizer {
    pub spec: RegularizerSpec,
    dropgraph: Option<DropGraph>,
    partial: Option<PartialGraph>,
}

impl Regularizer {
    pub fn none() -> Self {
        Self {
            spec: RegularizerSpec::None,
            dropgraph: None,
            partial: None,
        }
    }

    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: RegularizerSpec,
        channels: usize,
        spatial: (usize, usize),
        init: &RngStream,
    ) -> Result<Self> {
        spec.validate()?;
        let dropgraph = match spec.dropgraph_config() {
            Some(cfg) => Some(DropGraph::new(store, name, cfg, channels, spatial, init)?),
            None => None,
        };
        let partial = match spec {
            RegularizerSpec::PartialGraph(cfg) => Some(PartialGraph::new(store, name, cfg, channels, init)?),
            _ => None,
        };
        Ok(Self {
            spec,
            dropgraph,
            partial,
        })
    }

    pub fn is_none(&self) -> bool {
        self.spec == RegularizerSpec::None
    }

    /// Whether a forward pass in `mode` does any work at all.
    pub fn active(&self, mode: Mode) -> bool {
        match &self.partial {
            Some(pg) => pg.active(mode),
            None => mode == Mode::Train && !self.is_none(),
        }
    }

    pub fn rho(&self, progress: Progress) -> Result<f64> {
        match self.spec.rho_schedule() {
            Some((rho, kind)) => schedule_rho(&progress.scheduler(kind, rho)),
            None => Ok(0.0),
        }
    }

    /// Block mask for the mask-based kinds, so two sites (block output and
    /// skip path) can share it.
    pub fn sample_mask(&self, x: &Var<'_>, progress: Progress, stream: &RngStream, mode: Mode) -> Result<Option<DropMask>> {
        match (&self.dropgraph, mode) {
            (Some(dg), Mode::Train) => {
                let [n, _, h, w] = x.value().dims4("sample_mask")?;
                Ok(Some(dg.sample_mask(n, h, w, self.rho(progress)?, stream)?))
            }
            _ => Ok(None),
        }
    }

    pub fn forward<'t>(
        &self,
        x: &Var<'t>,
        p: &Bound<'t>,
        progress: Progress,
        stream: &RngStream,
        mode: Mode,
        shared_mask: Option<&DropMask>,
    ) -> Result<Var<'t>> {
        if !self.active(mode) {
            return Ok(*x);
        }
        match self.spec {
            RegularizerSpec::None => Ok(*x),
            RegularizerSpec::Dropout { rescale, .. } => {
                dropout(x, self.rho(progress)?, rescale, &stream.child(site::DROPOUT), mode)
            }
            RegularizerSpec::SpatialDropout { rescale, .. } => {
                spatial_dropout(x, self.rho(progress)?, rescale, &stream.child(site::DROPOUT), mode)
            }
            RegularizerSpec::DropBlock { .. } | RegularizerSpec::DropGraph(_) => {
                let dg = self.dropgraph.as_ref().expect("constructed with spec");
                Ok(dg.forward(x, p, self.rho(progress)?, stream, mode, shared_mask)?.output)
            }
            RegularizerSpec::PartialGraph(_) => {
                self.partial.as_ref().expect("constructed with spec").forward(x, p, stream, mode)
            }
        }
    }
}
