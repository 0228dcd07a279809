//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by
//! `(master_seed, index, sub, tag)`. Runs therefore see the same numbers no
//! matter how many threads execute them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a stream; keeps draws for different roles disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Train = 1,
    Test = 2,
    Covariance = 3,
    Moments = 4,
    Concentration = 5,
    Misc = 6,
}

const TAG_BITS: u32 = 4;
const SUB_BITS: u32 = 12;

/// Generator for `(master_seed, index, sub, tag)`.
///
/// `index` is the run (or batch) index and must stay below 2^48; `sub` is an
/// attempt counter used when a draw has to be replaced, below 2^12.
pub fn keyed_rng(master_seed: u64, index: u64, sub: u32, tag: StreamTag) -> ChaCha8Rng {
    assert!(index < 1 << (64 - TAG_BITS - SUB_BITS), "stream index overflow");
    assert!(sub < 1 << SUB_BITS, "stream sub-index overflow");
    let stream = (index << (TAG_BITS + SUB_BITS)) | ((sub as u64) << TAG_BITS) | tag as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Shorthand for a stream with no attempt counter.
pub fn stream_rng(master_seed: u64, index: u64, tag: StreamTag) -> ChaCha8Rng {
    keyed_rng(master_seed, index, 0, tag)
}
