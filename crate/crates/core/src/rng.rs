//! Path-addressed random streams.
//!
//! Every stochastic site in a run (block mask, vertex draw, multipliers,
//! augmentation, shuffling) pulls from its own [`RngStream`], identified by
//! the run seed plus an ordered list of integer labels. Two streams with the
//! same `(seed, path)` replay the same draws; any difference in the path gives
//! an unrelated ChaCha key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels for the stochastic sites inside a regularizer call.
pub mod site {
    pub const MASK: u64 = 0x6d61_736b;
    pub const VERTICES: u64 = 0x7665_7274;
    pub const MULTIPLIERS: u64 = 0x6d75_6c74;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const DROPOUT: u64 = 0x6472_6f70;
    pub const SKIP: u64 = 0x736b_6970;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const AUGMENT: u64 = 0x6175_676d;
    pub const INIT: u64 = 0x696e_6974;
    pub const DATA: u64 = 0x6461_7461;
    pub const EVAL: u64 = 0x6576_616c;
    pub const TRAIN: u64 = 0x7472_6169;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Stream one level deeper.
    pub fn child(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        Self { seed: self.seed, path }
    }

    /// Child keyed by a string label (FNV-1a), for streams named after
    /// parameters rather than numbered sites.
    pub fn child_named(&self, name: &str) -> Self {
        let label = name
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        self.child(label)
    }

    pub fn descend(&self, labels: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(labels);
        Self { seed: self.seed, path }
    }

    /// 256-bit ChaCha key folded from the seed and every path label.
    fn key(&self) -> [u8; 32] {
        let mut state = splitmix64(self.seed);
        for (depth, &label) in self.path.iter().enumerate() {
            state = splitmix64(state ^ splitmix64(label.wrapping_add((depth as u64 + 1) << 56)));
        }
        let mut key = [0u8; 32];
        let mut word = state;
        for chunk in key.chunks_exact_mut(8) {
            word = splitmix64(word);
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key())
    }
}
