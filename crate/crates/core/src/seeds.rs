//! Seed derivation.
//!
//! Every randomized step draws from its own [`ChaCha8Rng`] stream. Child
//! seeds are derived from a master seed and an ordinal with
//!
//! ```text
//! child_seed = splitmix64(master_seed ^ splitmix64(ordinal + 0x9E37_79B9_7F4A_7C15))
//! ```
//!
//! so that parallel work over margins or cases reproduces the sequential
//! result bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the `ordinal`-th unit of work under `master`.
pub fn derive_seed(master: u64, ordinal: u64) -> u64 {
    splitmix64(master ^ splitmix64(ordinal.wrapping_add(GOLDEN_GAMMA)))
}

/// Derive through a path of ordinals, e.g. `(stream, case, margin)`.
pub fn derive_path(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(master, |seed, &ordinal| derive_seed(seed, ordinal))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
