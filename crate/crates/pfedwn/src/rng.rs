//! Seeded random streams.
//!
//! A single master seed fans out to named sub-streams so that changing how
//! one stage consumes randomness does not perturb any other stage. Stream
//! identity is (name, index); the same pair always yields the same generator
//! on every platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic FNV-1a hash of a stream name.
fn fnv1a64(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives the generator for sub-stream `(name, index)` of `master_seed`.
pub fn substream(master_seed: u64, name: &str, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(fnv1a64(name).wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15)));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_stream_reproduces() {
        let mut a = substream(42, "topology", 3);
        let mut b = substream(42, "topology", 3);
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn distinct_names_and_indices_differ() {
        let mut a = substream(42, "topology", 0);
        let mut b = substream(42, "fading", 0);
        let mut c = substream(42, "topology", 1);
        let (x, y, z) = (a.random::<u64>(), b.random::<u64>(), c.random::<u64>());
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
