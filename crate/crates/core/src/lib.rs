//! Learned feature-map distortions from partial graph reasoning.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense arrays plus a dynamic reverse-mode tape.
//! * [`nn`]: convolution, linear, batch norm, pooling and the loss.
//! * [`regularizers`]: dropout baselines, block masks, vertex sampling,
//!   adjacency construction, distortion generators and the ρ schedulers.
//! * [`backbones`]: a small residual CNN and a two-layer GCN with
//!   regularizer insertion points.
//! * [`experiments`]: synthetic data, the SGD loop and multi-seed summaries.

pub mod backbones;
pub mod error;
pub mod experiments;
pub mod nn;
pub mod parallel;
pub mod regularizers;
pub mod rng;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use parallel::Parallelism;
pub use rng::RngStream;
pub use tensor::{Tape, Tensor, Var};
