//! Counter-based seed derivation. Every random stream in an experiment is a
//! pure function of `(master seed, sample index, role, ...)`, so results do
//! not depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a counter.
pub fn derive(parent: u64, counter: u64) -> u64 {
    mix64(mix64(parent) ^ counter.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// A ChaCha8 generator keyed by `seed` on substream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
