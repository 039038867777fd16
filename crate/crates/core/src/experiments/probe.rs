use super::data::ImageDataset;
use crate::error::Result;
use crate::nn::{accuracy, cross_entropy, Linear, ParamStore};
use crate::rng::RngStream;
use crate::tensor::Tape;

/// Val accuracy (percent) of softmax regression on raw pixels, trained by
/// full-batch gradient descent. Used to check the image task is not
/// linearly trivial.
pub fn linear_probe(data: &ImageDataset, steps: usize, lr: f64) -> Result<f64> {
    let flat = |t: &crate::tensor::Tensor| {
        let n = t.shape()[0];
        t.reshape(&[n, t.numel() / n])
    };
    let xt = flat(&data.train.images)?;
    let xv = flat(&data.val.images)?;
    let d = xt.shape()[1];
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "probe", d, data.spec.classes, &RngStream::new(0));
    for p in store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for _ in 0..steps {
        let tape = Tape::new();
        let p = store.bind(&tape, true);
        let loss = cross_entropy(&layer.forward(&tape.constant(xt.clone()), &p)?, &data.train.labels)?;
        tape.backward(loss)?;
        store.zero_grads();
        store.accumulate_grads(&p);
        super::train::sgd_step(&mut store, lr, 0.9, 0.0);
    }
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let logits = layer.forward(&tape.constant(xv), &p)?.value();
    Ok(100.0 * accuracy(&logits, &data.val.labels))
}
