//! Seeded, portable randomness for perturbations.
//!
//! All perturbation randomness flows through [`SeededRng`], a thin wrapper
//! around ChaCha8 (a fixed, named stream cipher RNG with published test
//! vectors) plus an explicit draw protocol. The protocol is part of the
//! output contract: identical seed + identical input must produce
//! bit-identical perturbations on every platform, and tests replay the
//! draw sequence independently to verify edit positions.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Identifier of the underlying generator, recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Deterministic RNG with a fixed draw protocol.
///
/// Draw protocol (each item consumes `next_u64` calls as stated):
/// - `pick(n)`: rejection-sampled `next_u64() % n` with zone
///   `u64::MAX - (u64::MAX % n)`; one draw unless rejected.
/// - `unit()`: one draw; top 53 bits scaled to `[0, 1)`.
/// - `shuffle(xs)`: Fisher-Yates from the highest index down;
///   `pick(i + 1)` for `i = len-1 .. 1`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Uniform draw from `[0, n)`. Panics if `n == 0`.
    pub fn pick(&mut self, n: usize) -> usize {
        assert!(n > 0, "pick from empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Uniform draw from `[0, 1)` with 53-bit resolution.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.pick(i + 1);
            items.swap(i, j);
        }
    }

    /// A uniform random permutation of `0..n`, as produced by [`shuffle`](Self::shuffle).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        self.shuffle(&mut perm);
        perm
    }
}

/// Derive a per-item seed from a global seed and string components.
///
/// FNV-1a over the little-endian global seed followed by each part,
/// parts separated by a 0x1f byte. Stable across platforms; used so
/// corpus reruns are reproducible while items stay independent.
pub fn derive_seed(global_seed: u64, parts: &[&str]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut hash = FNV_OFFSET;
    let mut eat = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(FNV_PRIME);
    };
    for byte in global_seed.to_le_bytes() {
        eat(byte);
    }
    for part in parts {
        eat(0x1f);
        for &byte in part.as_bytes() {
            eat(byte);
        }
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for n in [2usize, 3, 10, 1000] {
            assert_eq!(a.pick(n), b.pick(n));
        }
        assert_eq!(a.unit(), b.unit());
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(2);
        let xs: Vec<usize> = (0..8).map(|_| a.pick(1_000_000)).collect();
        let ys: Vec<usize> = (0..8).map(|_| b.pick(1_000_000)).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn pick_stays_in_range() {
        let mut rng = SeededRng::new(7);
        for _ in 0..10_000 {
            assert!(rng.pick(13) < 13);
        }
    }

    #[test]
    fn unit_stays_in_range() {
        let mut rng = SeededRng::new(7);
        for _ in 0..10_000 {
            let u = rng.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SeededRng::new(9);
        let mut xs: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    // Pins the ChaCha8 stream + draw protocol. If this ever fails, the
    // reproducibility contract of every recorded perturbation is broken.
    #[test]
    fn draw_protocol_pinned() {
        let mut rng = SeededRng::new(42);
        let picks: Vec<usize> = (0..4).map(|_| rng.pick(100)).collect();
        let mut raw = ChaCha8Rng::seed_from_u64(42);
        let mut expected = Vec::new();
        for _ in 0..4 {
            let zone = u64::MAX - (u64::MAX % 100);
            loop {
                let x = raw.next_u64();
                if x < zone {
                    expected.push((x % 100) as usize);
                    break;
                }
            }
        }
        assert_eq!(picks, expected);
    }

    #[test]
    fn derive_seed_is_stable_and_sensitive() {
        let a = derive_seed(1, &["story-1", "jumble"]);
        assert_eq!(a, derive_seed(1, &["story-1", "jumble"]));
        assert_ne!(a, derive_seed(2, &["story-1", "jumble"]));
        assert_ne!(a, derive_seed(1, &["story-2", "jumble"]));
        assert_ne!(a, derive_seed(1, &["story-1", "typo"]));
        // separator keeps part boundaries unambiguous
        assert_ne!(derive_seed(1, &["ab", "c"]), derive_seed(1, &["a", "bc"]));
    }
}
