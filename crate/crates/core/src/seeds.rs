//! Deterministic seed derivation.
//!
//! All randomness in the toolkit flows from named base seeds through the
//! mixers below into [`rand_chacha::ChaCha8Rng`] streams. The mix is the
//! splitmix64 finalizer, which is platform-stable and has no weak keys,
//! so per-mask, per-sample, and per-iteration streams are independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer: one full avalanche round.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and one stream index.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x51_7C_C1_B7_27_22_0A_95)))
}

/// Derive a child seed from a base seed and two stream indices.
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}

/// Derive a child seed from a base seed and three stream indices.
pub fn derive3(base: u64, a: u64, b: u64, c: u64) -> u64 {
    derive(derive2(base, a, b), c)
}

/// Deterministic RNG for a derived seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
