//! Seed derivation.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] whose
//! seed is derived from a user seed plus a list of integer tags. The mixing
//! function is the SplitMix64 finalizer applied to the running state after
//! each tag is folded in:
//!
//! ```text
//! h0 = splitmix(base)
//! h_{i+1} = splitmix(h_i ^ rotl(tag_i, 17) ^ 0x9e37_79b9_7f4a_7c15 * (i + 1))
//! ```
//!
//! The function is stable across platforms and releases, so a `(base, tags)`
//! pair always names the same stream and cells of a sweep can be recomputed
//! independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent randomness sources used by the measurement and decoding code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Matrix = 1,
    Noise = 2,
    Flips = 3,
    Restart = 4,
    Latent = 5,
    Pairs = 6,
    Gaussians = 7,
    Weights = 8,
    Cell = 9,
    Net = 10,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stable hash of a base seed and a sequence of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for (i, &t) in tags.iter().enumerate() {
        h = splitmix(h ^ t.rotate_left(17) ^ GOLDEN.wrapping_mul(i as u64 + 1));
    }
    h
}

/// Generator for one named stream under `seed`.
pub fn stream_rng(seed: u64, stream: Stream, tags: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(tags.len() + 1);
    all.push(stream as u64);
    all.extend_from_slice(tags);
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable() {
        // frozen so that published seeds keep naming the same cells
        assert_eq!(derive_seed(0, &[]), splitmix(0));
        assert_eq!(derive_seed(7, &[250, 3]), derive_seed(7, &[250, 3]));
        assert_ne!(derive_seed(7, &[250, 3]), derive_seed(7, &[3, 250]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn streams_differ() {
        let a: u64 = stream_rng(1, Stream::Noise, &[]).random();
        let b: u64 = stream_rng(1, Stream::Flips, &[]).random();
        assert_ne!(a, b);
    }
}
