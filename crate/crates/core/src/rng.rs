//! Counter-based random streams.
//!
//! Every random quantity in a logging run is addressed by `(seed, key, k)`:
//! the seed of the run, a [`StreamKey`] naming the tape or trajectory, and
//! the position `k` along that stream. The backing generator is ChaCha8,
//! whose 64-bit stream id and seekable word position give random access to
//! the `k`-th draw. A tape that is read sequentially and a simulator that
//! seeks directly to position `k` therefore see the same numbers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KIND_SHIFT: u32 = 60;
const FIELD_BITS: u32 = 20;
const FIELD_MASK: u64 = (1 << FIELD_BITS) - 1;

/// Largest `S`, `A` or `H` that fits in a [`StreamKey`].
pub const MAX_DIMENSION: usize = 1 << FIELD_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Kind {
    Initial = 1,
    Transition = 2,
    Reward = 3,
    Action = 4,
    Derive = 5,
}

/// Identifies one random stream within a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    fn cell(kind: Kind, h: usize, s: usize, a: usize) -> Self {
        debug_assert!(h < MAX_DIMENSION && s < MAX_DIMENSION && a < MAX_DIMENSION);
        StreamKey(
            ((kind as u64) << KIND_SHIFT)
                | ((h as u64 & FIELD_MASK) << (2 * FIELD_BITS))
                | ((s as u64 & FIELD_MASK) << FIELD_BITS)
                | (a as u64 & FIELD_MASK),
        )
    }

    /// Initial-state tape.
    pub fn initial() -> Self {
        StreamKey((Kind::Initial as u64) << KIND_SHIFT)
    }

    /// Next-state tape of cell `(h, s, a)`.
    pub fn transition(h: usize, s: usize, a: usize) -> Self {
        Self::cell(Kind::Transition, h, s, a)
    }

    /// Realized-reward tape of cell `(h, s, a)`.
    pub fn reward(h: usize, s: usize, a: usize) -> Self {
        Self::cell(Kind::Reward, h, s, a)
    }

    /// Action draws of trajectory `i`; position `h` is the draw at step `h`.
    pub fn action(trajectory: usize) -> Self {
        StreamKey(((Kind::Action as u64) << KIND_SHIFT) | (trajectory as u64 & ((1 << KIND_SHIFT) - 1)))
    }

    fn derive() -> Self {
        StreamKey((Kind::Derive as u64) << KIND_SHIFT)
    }

    pub fn id(self) -> u64 {
        self.0
    }
}

/// Generator positioned at the start of stream `key`.
pub fn stream(seed: u64, key: StreamKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.id());
    rng.set_word_pos(0);
    rng
}

/// The `k`-th 64-bit draw of stream `key`, by seeking.
pub fn draw_at(seed: u64, key: StreamKey, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.id());
    rng.set_word_pos(2 * k as u128);
    rng.next_u64()
}

/// Maps a 64-bit draw to `[0, 1)` using its top 53 bits.
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF sample from a probability vector.
///
/// Zero-probability entries are never returned. Rounding slack at the top of
/// the CDF falls to the last entry with positive mass.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cumulative += p;
            last_positive = i;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

/// Child seed for sub-task `tag` of a run seeded with `parent`.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    draw_at(parent, StreamKey::derive(), tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_stream_matches_random_access() {
        let key = StreamKey::transition(3, 1, 2);
        let mut rng = stream(42, key);
        for k in 0..200 {
            assert_eq!(rng.next_u64(), draw_at(42, key, k));
        }
    }

    #[test]
    fn keys_are_distinct_streams() {
        let a = draw_at(7, StreamKey::transition(0, 0, 1), 0);
        let b = draw_at(7, StreamKey::transition(0, 1, 0), 0);
        let c = draw_at(7, StreamKey::reward(0, 0, 1), 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(draw_at(7, StreamKey::action(0), 0), draw_at(8, StreamKey::action(0), 0));
    }

    #[test]
    fn unit_interval() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
    }

    #[test]
    fn sample_index_skips_zero_mass() {
        let p = [0.0, 0.5, 0.0, 0.5];
        assert_eq!(sample_index(&p, 0.0), 1);
        assert_eq!(sample_index(&p, 0.49), 1);
        assert_eq!(sample_index(&p, 0.5), 3);
        assert_eq!(sample_index(&p, 0.999_999_999), 3);
        assert_eq!(sample_index(&[0.3, 0.7, 0.0], 1.0), 1);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(1, 5), derive_seed(1, 5));
    }
}
