//! Counter-based derivation of independent random streams from one seed.
//!
//! Every random draw in the pipeline comes from a stream identified by
//! `(seed, purpose, indices)`. Streams never depend on thread count or on
//! how many draws other streams made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(seed, purpose, indices)` used as the seed of a derived stream.
pub fn derive_seed(seed: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut purpose_hash = FNV_OFFSET;
    for byte in purpose.bytes() {
        purpose_hash ^= u64::from(byte);
        purpose_hash = purpose_hash.wrapping_mul(FNV_PRIME);
    }
    let mut state = splitmix64(seed ^ splitmix64(purpose_hash));
    for &index in indices {
        state = splitmix64(state ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    state
}

pub fn stream(seed: u64, purpose: &str, indices: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, indices))
}
