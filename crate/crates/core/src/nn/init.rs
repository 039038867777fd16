use crate::rng::RngStream;
use crate::tensor::Tensor;
use rand_distr::{Distribution, Normal};

/// He-normal weights: N(0, 2 / fan_in).
pub fn kaiming_normal(shape: &[usize], fan_in: usize, stream: &RngStream) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = stream.rng();
    Tensor::from_fn(shape, |_| normal.sample(&mut rng))
}
