//! Desk-scale networks with regularizer insertion points.

mod checkpoint;
mod gcn;
mod resnet;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gcn::{normalized_adjacency, GraphInstance, TwoLayerGcn, TwoLayerGcnConfig};
pub use resnet::{ResidualBlock, TinyResNet, TinyResNetConfig};

use crate::nn::NormMode;
use crate::parallel::Parallelism;
use crate::regularizers::{Mode, Progress};
use crate::rng::RngStream;

/// Everything a forward pass needs besides inputs and parameters.
#[derive(Clone, Debug)]
pub struct Pass {
    pub norm: NormMode,
    pub reg: Mode,
    pub progress: Progress,
    pub stream: RngStream,
    pub par: Parallelism,
}

impl Pass {
    pub fn train(progress: Progress, stream: RngStream) -> Self {
        Self {
            norm: NormMode::Train,
            reg: Mode::Train,
            progress,
            stream,
            par: Parallelism::default(),
        }
    }

    /// Inference: running norm statistics, regularizers skipped.
    pub fn eval() -> Self {
        Self {
            norm: NormMode::Eval,
            reg: Mode::Eval,
            progress: Progress::finished(),
            stream: RngStream::new(0),
            par: Parallelism::default(),
        }
    }

    pub fn with_parallelism(mut self, par: Parallelism) -> Self {
        self.par = par;
        self
    }
}
