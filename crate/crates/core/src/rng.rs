//! Seeded random streams.
//!
//! Every stochastic choice tied to one sample (clip start, augmentation)
//! draws from its own stream keyed by `(seed, sample_id, epoch)`, so results
//! do not depend on processing order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes of `s`.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the stream for one sample in one epoch.
pub fn stream_seed(seed: u64, sample_id: &str, epoch: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ fnv1a(sample_id)) ^ epoch)
}

pub fn sample_stream(seed: u64, sample_id: &str, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, sample_id, epoch))
}

/// Stream for a named pipeline stage (shuffling, splitting, init).
pub fn stage_stream(seed: u64, stage: &str, index: u64) -> ChaCha8Rng {
    sample_stream(seed, stage, index)
}
