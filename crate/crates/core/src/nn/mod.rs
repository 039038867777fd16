//! Layers and losses for the backbones.

mod conv;
mod init;
mod linear;
mod loss;
mod norm;
mod params;
mod pool;

pub use conv::{conv2d, Conv2d, ConvGeometry};
pub use init::kaiming_normal;
pub use linear::Linear;
pub use loss::{accuracy, argmax, cross_entropy};
pub use norm::{batch_norm, BatchNorm2d, NormMode, NormState, NORM_EPS};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use pool::global_avg_pool;
