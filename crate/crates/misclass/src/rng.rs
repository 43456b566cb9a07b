//! Deterministic stream derivation for parallel work.
//!
//! Every randomized task (a simulated dataset, a replication, an imputation
//! run) gets its own ChaCha8 stream whose seed is a SplitMix64-style hash of
//! the master seed and the task coordinates. Streams are independent of
//! scheduling order, so parallel and sequential runs see identical draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One SplitMix64 round.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream seed from a master seed and up to two task coordinates.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(master) ^ a) ^ b)
}

/// A seeded generator for the stream `(master, a, b)`.
pub fn stream(master: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, a, b))
}
