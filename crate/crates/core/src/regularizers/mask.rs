//! Block masks: contiguous s×s dropped squares shared across channels.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use rand::Rng;

/// Binary spatial gate `(batch, h, w)`; 1 keeps, 0 drops.
#[derive(Clone, Debug, PartialEq)]
pub struct DropMask {
    pub gate: Tensor,
    pub dropped_fraction: f64,
}

impl DropMask {
    pub fn keep_all(batch: usize, h: usize, w: usize) -> Self {
        Self {
            gate: Tensor::ones(&[batch, h, w]),
            dropped_fraction: 0.0,
        }
    }

    pub fn batch(&self) -> usize {
        self.gate.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.gate.shape()[1], self.gate.shape()[2])
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let (h, w) = self.spatial();
        &self.gate.data()[b * h * w..(b + 1) * h * w]
    }

    pub fn any_dropped(&self) -> bool {
        self.gate.data().contains(&0.0)
    }

    pub fn item_has_drops(&self, b: usize) -> bool {
        self.item(b).contains(&0.0)
    }

    fn from_gate(gate: Tensor) -> Self {
        let dropped_fraction = 1.0 - gate.mean();
        Self { gate, dropped_fraction }
    }
}

/// Number of valid block seeds covering each coordinate along one axis.
fn coverage(len: usize, s: usize) -> Vec<usize> {
    (0..len).map(|i| (i + 1).min(s).min(len - i).min(len - s + 1)).collect()
}

/// First-order seed rate `ρ·h·w / (s²·(h−s+1)·(w−s+1))`. Ignores overlap
/// between blocks, so the realized drop rate falls short of ρ as ρ·s grows.
pub fn dropblock_gamma(h: usize, w: usize, s: usize, rho: f64) -> f64 {
    let valid = ((h - s + 1) * (w - s + 1)) as f64;
    rho * (h * w) as f64 / ((s * s) as f64 * valid)
}

/// Expected dropped fraction for seed rate `gamma`, counting overlaps.
pub fn expected_drop_rate(h: usize, w: usize, s: usize, gamma: f64) -> f64 {
    let (ch, cw) = (coverage(h, s), coverage(w, s));
    let keep = 1.0 - gamma;
    let total: f64 = ch
        .iter()
        .flat_map(|&a| cw.iter().map(move |&b| 1.0 - keep.powi((a * b) as i32)))
        .sum();
    total / (h * w) as f64
}

/// Seed rate whose expected dropped fraction is exactly `rho`.
pub fn calibrated_gamma(h: usize, w: usize, s: usize, rho: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    if s == 1 {
        return rho;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_drop_rate(h, w, s, mid) < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn check(h: usize, w: usize, s: usize, rho: f64) -> Result<()> {
    if s == 0 || s > h.min(w) {
        return Err(Error::Contract(format!("block size {s} does not fit a {h}x{w} map")));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Contract(format!("drop probability {rho} outside [0, 1)")));
    }
    Ok(())
}

fn sample_gate(h: usize, w: usize, s: usize, gamma: f64, stream: &RngStream, out: &mut [f64]) {
    out.fill(1.0);
    if gamma <= 0.0 {
        return;
    }
    let mut rng = stream.rng();
    for i in 0..=h - s {
        for j in 0..=w - s {
            if rng.random::<f64>() < gamma {
                for y in i..i + s {
                    out[y * w + j..y * w + j + s].fill(0.0);
                }
            }
        }
    }
}

/// One `h × w` mask (batch of 1).
pub fn sample_block_mask(h: usize, w: usize, s: usize, rho: f64, stream: &RngStream) -> Result<DropMask> {
    sample_block_masks(1, h, w, s, rho, stream)
}

/// Independent masks per batch item; item `b` draws from `stream.child(b)`.
pub fn sample_block_masks(
    batch: usize,
    h: usize,
    w: usize,
    s: usize,
    rho: f64,
    stream: &RngStream,
) -> Result<DropMask> {
    check(h, w, s, rho)?;
    let gamma = calibrated_gamma(h, w, s, rho);
    let mut gate = Tensor::ones(&[batch, h, w]);
    for (b, item) in gate.data_mut().chunks_exact_mut(h * w).enumerate() {
        sample_gate(h, w, s, gamma, &stream.child(b as u64), item);
    }
    Ok(DropMask::from_gate(gate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_keeps_everything() {
        let m = sample_block_masks(3, 8, 8, 3, 0.0, &RngStream::new(1)).unwrap();
        assert_eq!(m.dropped_fraction, 0.0);
        assert!(!m.any_dropped());
    }

    #[test]
    fn unit_block_is_a_bernoulli_gate() {
        assert_eq!(calibrated_gamma(16, 16, 1, 0.3), 0.3);
        assert_eq!(dropblock_gamma(16, 16, 1, 0.3), 0.3);
        let m = sample_block_masks(200, 16, 16, 1, 0.3, &RngStream::new(2)).unwrap();
        assert!((m.dropped_fraction - 0.3).abs() < 0.01, "{}", m.dropped_fraction);
    }

    #[test]
    fn dropped_cells_are_unions_of_full_blocks() {
        let (h, w, s) = (12, 10, 3);
        let m = sample_block_masks(20, h, w, s, 0.2, &RngStream::new(3)).unwrap();
        for b in 0..20 {
            let g = m.item(b);
            // every dropped cell lies in some fully dropped s×s window
            for y in 0..h {
                for x in 0..w {
                    if g[y * w + x] != 0.0 {
                        continue;
                    }
                    let covered = (y.saturating_sub(s - 1)..=y.min(h - s)).any(|i| {
                        (x.saturating_sub(s - 1)..=x.min(w - s))
                            .any(|j| (i..i + s).all(|yy| (j..j + s).all(|xx| g[yy * w + xx] == 0.0)))
                    });
                    assert!(covered, "orphan drop at ({y},{x})");
                }
            }
            assert!(g.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn oversized_block_is_rejected() {
        assert!(sample_block_mask(4, 8, 5, 0.1, &RngStream::new(0)).is_err());
        assert!(sample_block_mask(8, 8, 3, 1.0, &RngStream::new(0)).is_err());
    }

    #[test]
    fn calibration_hits_target_and_first_order_rate_undershoots() {
        for &(h, s, rho) in &[(16, 3, 0.1), (16, 5, 0.2), (32, 3, 0.05)] {
            let g = calibrated_gamma(h, h, s, rho);
            assert!((expected_drop_rate(h, h, s, g) - rho).abs() < 1e-12);
            assert!(g >= dropblock_gamma(h, h, s, rho));
        }
        let naive = expected_drop_rate(16, 16, 5, dropblock_gamma(16, 16, 5, 0.2));
        assert!(naive < 0.18, "{naive}");
    }

    #[test]
    fn same_stream_same_mask() {
        let a = sample_block_masks(4, 9, 9, 3, 0.15, &RngStream::new(9).child(1)).unwrap();
        let b = sample_block_masks(4, 9, 9, 3, 0.15, &RngStream::new(9).child(1)).unwrap();
        assert_eq!(a, b);
    }
}
