//! Keyed random substreams.
//!
//! Every stochastic step draws from a ChaCha8 stream whose seed is a hash of
//! `(seed, purpose, key...)`, so results never depend on the order in which
//! clients are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Train = 1,
    Unlearn = 2,
    Synthetic = 3,
    Repeat = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of keys into a single 64-bit seed.
pub fn derive_seed(seed: u64, stream: Stream, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    h
}

pub fn substream(seed: u64, stream: Stream, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, keys))
}
