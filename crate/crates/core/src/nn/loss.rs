use crate::error::{Error, Result};
use crate::tensor::{ops_softmax_rows, Tensor, Var};

/// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
pub fn cross_entropy<'t>(logits: &Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let z = logits.value();
    let (n, classes) = z.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", z.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
    }
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &z.data()[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
    }
    let inv = 1.0 / n as f64;
    let probs = ops_softmax_rows(&z, n, classes);
    let labels = labels.to_vec();
    Ok(logits.tape().record(Tensor::scalar(loss * inv), &[*logits], move |g, _| {
        let scale = g.item() * inv;
        let mut d = probs.clone();
        for (i, &label) in labels.iter().enumerate() {
            d.data_mut()[i * classes + label] -= 1.0;
        }
        d.data_mut().iter_mut().for_each(|v| *v *= scale);
        vec![Some(d)]
    }))
}

/// Fraction of rows whose arg-max equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[1];
    let hits = logits
        .data()
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};

    #[test]
    fn uniform_logits_give_log_classes() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::full(&[3, 4], 0.7));
        let l = cross_entropy(&z, &[0, 1, 3]).unwrap().value().item();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_margin_goes_to_zero() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[&[0.0, 60.0, 0.0]]));
        let l = cross_entropy(&z, &[1]).unwrap().value().item();
        assert!((0.0..1e-20).contains(&l));
    }

    #[test]
    fn reference_value_and_label_range() {
        let tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0]]));
        let l = cross_entropy(&z, &[2]).unwrap().value().item();
        let want = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((l - want).abs() < 1e-14);
        assert!(matches!(cross_entropy(&z, &[3]), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_matches_differences() {
        let z = Tensor::from_fn(&[4, 3], |i| (i as f64 * 0.9).sin() * 2.0);
        let err = grad_check(|_, v| cross_entropy(&v, &[0, 2, 1, 1]), &z, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let z = Tensor::from_rows(&[&[0.1, 0.9], &[0.8, 0.2], &[0.3, 0.7]]);
        assert!((accuracy(&z, &[1, 1, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
