//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded with
//! `seed + offset`, where the offset names the consumer. Two consumers with
//! the same base seed never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Offsets added to a base seed, one per consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Cost coefficients and observations of generated instances.
    Instance = 0,
    /// Pair sampling in monotonicity diagnostics.
    Monotonicity = 1,
    /// Feasible-point sampling for gap lower bounds.
    GapSampling = 2,
    /// Difference-quotient sampling for Lipschitz estimates.
    LipschitzEstimate = 3,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(which as u64))
}
