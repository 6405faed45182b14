//! Named, replayable random streams derived from one experiment seed.
//!
//! Every consumer of randomness (initialization, dropout, posterior
//! sampling, subsampling, shuffling) asks for a stream by name and index,
//! so adding a consumer never perturbs the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
    mix64(mix64(seed ^ fnv1a(name)).wrapping_add(index))
}

/// Returns the stream `(seed, name, index)`. Pure in its arguments.
pub fn stream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ fnv1a(name)));
    rng.set_stream(index);
    rng
}
