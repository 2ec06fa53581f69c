//! Seeded uniform sampling shared by repository construction and retrieval.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// RNG keyed by a run seed and a salt naming what is being sampled, so each
/// draw is reproducible on its own regardless of iteration order elsewhere.
pub fn rng_for(seed: u64, salt: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Uniform sample of `min(k, items.len())` positions without replacement, in
/// the order drawn.
pub fn sample_positions(len: usize, k: usize, seed: u64, salt: &str) -> Vec<usize> {
    let amount = k.min(len);
    index::sample(&mut rng_for(seed, salt), len, amount).into_vec()
}

/// As [`sample_positions`], but returns positions in ascending order.
pub fn sample_positions_sorted(len: usize, k: usize, seed: u64, salt: &str) -> Vec<usize> {
    let mut v = sample_positions(len, k, seed, salt);
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_distinct() {
        let a = sample_positions(50, 10, 7, "x");
        assert_eq!(a, sample_positions(50, 10, 7, "x"));
        assert_ne!(a, sample_positions(50, 10, 8, "x"));
        let mut d = a.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert_eq!(sample_positions(3, 10, 1, "y").len(), 3);
    }
}
