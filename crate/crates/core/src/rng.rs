//! Deterministic RNG streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream that is
//! addressed by `(master seed, domain, index)`, so any record, channel
//! realization or worker can be regenerated independently of evaluation
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Stream domains. Distinct domains never share key material.
pub mod domain {
    pub const POPULATION: u64 = 1;
    pub const RECORD: u64 = 2;
    pub const GEOMETRY: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const VERIFY: u64 = 7;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Returns the RNG for `(master, domain, index)`.
pub fn stream(master: u64, domain: u64, index: u64) -> Rng {
    let mut state = master ^ domain.wrapping_mul(0xd134_2543_de82_ef95);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

/// Convenience for tests and one-off draws.
pub fn from_seed(seed: u64) -> Rng {
    stream(seed, 0, 0)
}
