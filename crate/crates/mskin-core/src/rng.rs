//! Counter-based random streams: every (seed, key) pair names an
//! independent ChaCha stream, so batches can be generated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream for `seed` keyed by up to a few small integers (species pair,
/// batch index, probe id...).
pub fn stream(seed: u64, key: &[u64]) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &k in key {
        h ^= k.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    }
    rng.set_stream(h);
    rng
}
