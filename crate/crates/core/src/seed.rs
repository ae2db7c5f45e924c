//! Seed derivation and the simulator's random stream.
//!
//! Everything random in the crate is driven by SplitMix64 so that another
//! implementation can reproduce the exact same streams:
//!
//! ```text
//! mix64(z):
//!     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!     return z ^ (z >> 31)
//!
//! derive(seed, i) = mix64(seed + 0x9E3779B97F4A7C15 * (i + 1))   (wrapping)
//!
//! SplitMix64.next_u64: state += 0x9E3779B97F4A7C15; return mix64(state)
//! next_f64           = (next_u64 >> 11) * 2^-53                 in [0, 1)
//! below(n)           = rejection sample next_u64 < floor(2^64 / n) * n, then mod n
//! normal             = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)       (one draw per pair)
//! ```

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed `index` of `seed`.
#[inline]
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// Derive along a path of indices, e.g. `derive_path(seed, &[STREAM, round, worker])`.
pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &i| derive(s, i))
}

/// Stream tags. Distinct constants keep unrelated consumers of one seed apart.
pub mod stream {
    pub const TRAIN_DATA: u64 = 0x01;
    pub const AUX_DATA: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const SAMPLING: u64 = 0x04;
    pub const CLIENT: u64 = 0x05;
    pub const CENTRAL: u64 = 0x06;
    pub const PARTITION_SHUFFLE: u64 = 0x10;
    pub const PARTITION_ASSIGN: u64 = 0x11;
    pub const PARTITION_COUNTS: u64 = 0x12;
    pub const PARTITION_RESTAMP: u64 = 0x13;
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = (u64::MAX / n) * n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller, discarding the sine half.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
