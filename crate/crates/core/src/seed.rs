//! Named seed derivation.
//!
//! Every random stream in the crate is seeded from one master seed plus a
//! component name and an index (round, instance, grid point). The mapping is
//! a fixed hash, so any stage of a pipeline can be reproduced on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(master ^ fnv1a(component)) ^ index)`.
pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h) ^ index)
}

pub fn rng_for(master: u64, component: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, component, index))
}
