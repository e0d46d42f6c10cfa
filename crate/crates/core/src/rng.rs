//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator so
//! results are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a path of indices (fold, stream, ...) into an
/// independent seed using the splitmix64 finalizer.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = splitmix(base);
    for &p in path {
        s = splitmix(s ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    s
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
