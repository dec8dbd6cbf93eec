//! Counter-based randomness.
//!
//! Every draw is a pure function of `(seed, stream, counter)`, so rollouts are
//! bitwise reproducible regardless of how work is scheduled.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless generator keyed by a seed and a stream (e.g. an episode index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)),
        }
    }

    pub fn bits(&self, counter: u64) -> u64 {
        splitmix64(self.key ^ splitmix64(counter.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Index drawn from `probs` by inverse CDF on `uniform(counter)`.
    pub fn categorical(&self, counter: u64, probs: &[f64]) -> usize {
        sample_index(self.uniform(counter), probs)
    }
}

/// Inverse-CDF lookup. Falls back to the last positive entry when rounding
/// leaves `u` above the cumulative sum.
pub fn sample_index(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// 64-bit FNV-1a over a byte stream.
pub fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
