//! Seeded, platform-independent random streams.
//!
//! Every stochastic routine draws from ChaCha8 keyed by a 64-bit seed. A
//! routine that needs several independent sources uses one ChaCha stream
//! per purpose (see the `STREAM_*` constants), so adding draws to one
//! subroutine never shifts the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used by the DAG generator.
pub const STREAM_ORDER: u64 = 0;
pub const STREAM_BASE_EDGES: u64 = 1;
pub const STREAM_CONFOUNDERS: u64 = 2;
pub const STREAM_COLLIDERS: u64 = 3;
pub const STREAM_MEDIATORS: u64 = 4;
/// Stream id used when drawing a [`GraphSpec`](crate::generate::GraphSpec).
pub const STREAM_SPEC: u64 = 5;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finaliser; used to derive child seeds from a master seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for item `index` under `master`, e.g. one seed
/// per generated sample.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(domain)) ^ index)
}
