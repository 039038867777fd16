use super::init::kaiming_normal;
use super::params::{Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::{Tensor, Var};

/// `y = x·W + b` with `W: (in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, init: &RngStream) -> Self {
        Self {
            weight: store.add(
                format!("{name}.weight"),
                kaiming_normal(&[in_features, out_features], in_features, init),
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_features])),
            in_features,
            out_features,
        }
    }

    pub fn forward<'t>(&self, x: &Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        x.matmul(&p[self.weight])?.add_row_vector(&p[self.bias])
    }
}
