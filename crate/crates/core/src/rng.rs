//! Seedable, platform-independent pseudo-random numbers.
//!
//! Every random choice in the crate (BRIEF test pairs, RANSAC samples,
//! synthetic textures) is drawn from [`XorShift64Star`] so results can be
//! reproduced bit for bit by other implementations. The generator is pinned:
//!
//! * seeding: `state = splitmix64(seed)`; a zero state is replaced by
//!   `0x9E37_79B9_7F4A_7C15`.
//! * update: `x ^= x >> 12; x ^= x << 25; x ^= x >> 27; state = x`.
//! * output: `x.wrapping_mul(0x2545_F491_4F6C_DD1D)`.
//! * `next_f64`: `(next_u64() >> 11) * 2^-53`, uniform in `[0, 1)`.
//! * `gaussian`: Box-Muller, `u1 = 1 - next_f64()`, `u2 = next_f64()`,
//!   `sqrt(-2 ln u1) * cos(2 pi u2)`. One output per two draws, no caching.
//! * `below(n)`: rejection sampling on `next_u64()` with the zone
//!   `u64::MAX - u64::MAX % n`, then `% n`.
//!
//! Component seeds are derived from one top-level seed with
//! [`derive_seed`]: `splitmix64(seed ^ fnv1a64(label))`.

/// One step of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Expands a top-level seed into an independent per-component seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label))
}

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = match splitmix64(seed) {
            0 => 0x9E37_79B9_7F4A_7C15,
            s => s,
        };
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal deviate.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
