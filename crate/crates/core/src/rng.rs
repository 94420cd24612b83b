//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a [`Stream`] derived from a base
//! seed, a purpose tag and an index (usually a frame id). Deriving instead of
//! sharing one generator makes per-frame results independent of iteration
//! order and of how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to `base + (index + 1) * golden_gamma`.
///
/// This is the mixing function of Steele, Lea and Flood's SplitMix64
/// generator, evaluated at position `index + 1` of the sequence seeded with
/// `base`.
pub fn mix64(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags keep streams used for different jobs on the same frame apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    Fixations = 2,
    Bootstrap = 3,
    Evaluation = 4,
    Init = 5,
    Ioc = 6,
    Toy = 7,
    Study = 8,
}

pub fn child_seed(base: u64, purpose: Purpose, index: u64) -> u64 {
    mix64(mix64(base, purpose as u64), index)
}

pub fn stream(base: u64, purpose: Purpose, index: u64) -> Stream {
    Stream::seed_from_u64(child_seed(base, purpose, index))
}
