//! Deterministic random streams.
//!
//! Every stochastic consumer (parameter init, window sampling, dropout,
//! evaluation sampling, per-trajectory generation) draws from its own
//! ChaCha8 stream derived from a user seed, so adding draws to one
//! consumer never perturbs another and generation order is irrelevant.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids; fixed so artifacts are reproducible across versions.
pub mod stream {
    pub const INIT: u64 = 0;
    pub const DATA_SAMPLING: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const EVAL: u64 = 3;
    /// Trajectory streams start here; trajectory `i` uses `TRAJ_BASE + i`.
    pub const TRAJ_BASE: u64 = 1000;
}

/// A ChaCha8 generator on (seed, stream).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer: derives a sub-seed from (seed, salt), e.g. the
/// per-step dropout seed.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
