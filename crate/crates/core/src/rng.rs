//! Portable, seedable randomness.
//!
//! Every random decision in the toolkit (attack visit orders, augmentation
//! coin flips, dataset splits, training shuffles, toy corpus sampling) is drawn
//! from [`SplitMix64`], so a seed reproduces the same outputs on any platform
//! and in any reimplementation that follows the definitions below:
//!
//! * state update: `state += 0x9E3779B97F4A7C15`; output is the SplitMix64
//!   finalizer of the new state (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!   z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`).
//! * [`SplitMix64::next_f64`]: `(next_u64() >> 11) * 2^-53`, uniform on `[0, 1)`.
//! * [`SplitMix64::below`]: Lemire's multiply-shift with rejection, unbiased.
//! * [`SplitMix64::shuffle`]: Fisher-Yates from the last index down, `j = below(i + 1)`.
//! * [`derive_seed`]: FNV-1a 64 over the seed (little-endian) followed by each
//!   part's UTF-8 bytes and a `0xFF` separator, passed through the finalizer.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Stream keyed by a base seed and a list of string parts (utterance id, language, ...).
    pub fn derived(seed: u64, parts: &[&str]) -> Self {
        SplitMix64::new(derive_seed(seed, parts))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        self.shuffle(&mut order);
        order
    }
}

pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut feed = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    };
    for b in seed.to_le_bytes() {
        feed(b);
    }
    for part in parts {
        for &b in part.as_bytes() {
            feed(b);
        }
        feed(0xFF);
    }
    mix(h)
}
