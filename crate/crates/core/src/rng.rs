//! Reproducible random streams.
//!
//! Every random draw in an ensemble comes from a ChaCha8 stream selected by
//! `(master_seed, purpose, stream index)`. ChaCha is counter based: the word
//! at a given position of a stream is a pure function of the key, stream id
//! and counter, so results never depend on how paths are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Separates the stream families drawn from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    PathNoise = 1,
    GibbsSampling = 2,
    Bootstrap = 3,
    InitialStates = 4,
    Baseline = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `index` of the family `purpose` under `master_seed`.
pub fn stream(master_seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut state = master_seed ^ (purpose as u64).wrapping_mul(0xd1b5_4a32_d192_ed03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
