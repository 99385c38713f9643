//! Seeded, platform-independent randomness.
//!
//! All randomized steps draw from ChaCha8 keyed by a 64-bit seed. Independent
//! sub-tasks (one per PQ sub-space, one per experiment stage) use separate
//! ChaCha streams of the same key, so results do not depend on thread count
//! or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Environment variable consulted for a seed when none is given explicitly.
pub const SEED_ENV: &str = "QUANTVEC_SEED";

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator on stream `stream` of this seed, independent of how
    /// much of `self` has been consumed.
    pub fn derive(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng { seed: self.seed, inner }
    }
}

impl rand::RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Seed from `explicit`, else `QUANTVEC_SEED`, else [`DEFAULT_SEED`].
pub fn resolve_seed(explicit: Option<u64>) -> u64 {
    explicit
        .or_else(|| std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()))
        .unwrap_or(DEFAULT_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn known_first_draws() {
        // Pinned so a generator swap shows up as a test failure.
        let mut rng = Rng::new(0);
        let first: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        assert_eq!(first, vec![0xb585f767a79a3b6c, 0x7746a55fbad8c037, 0xb2fb0d3281e2a6e6]);
    }

    #[test]
    fn derived_streams_differ_and_repeat() {
        let base = Rng::new(11);
        let mut s1 = base.derive(1);
        let mut s2 = base.derive(2);
        let mut s1_again = Rng::new(11).derive(1);
        let x = s1.next_u64();
        assert_ne!(x, s2.next_u64());
        assert_eq!(x, s1_again.next_u64());
    }
}
