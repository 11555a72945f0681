//! Seed derivation for reproducible, independent RNG streams.
//!
//! Every randomized stage derives its own stream from a root seed and a
//! stream index, so stages can run in parallel and still produce
//! bit-identical results run to run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive an independent child seed from `(root, stream)`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(root).wrapping_add(splitmix64(stream ^ 0xa5a5_5a5a_dead_beef)))
}

/// Seeded RNG used throughout the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
