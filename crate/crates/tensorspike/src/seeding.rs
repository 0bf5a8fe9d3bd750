//! Deterministic seed derivation for independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `base`: `base ⊕ hash(stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    base ^ mix64(stream)
}

/// Stream tags used by the pipeline; sign patterns use their index `τ` directly.
pub mod tags {
    pub const INIT: u64 = 1 << 40;
    pub const PHASE3_PLUS: u64 = (1 << 40) + 1;
    pub const PHASE3_MINUS: u64 = (1 << 40) + 2;
    pub const SEARCH: u64 = (1 << 40) + 3;
    pub const SPECTRAL: u64 = (1 << 40) + 4;
    pub const INSTANCE: u64 = (1 << 40) + 5;
    pub const NOISE: u64 = (1 << 40) + 6;
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
