//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a ChaCha stream keyed by the
//! master seed plus a tuple of tags (round, device, purpose). Streams for
//! different tuples are independent, and the same tuple always replays the
//! same draws regardless of thread scheduling or scheme.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    Uplink = 2,
    Downlink = 3,
    Dataset = 4,
    Distance = 5,
    Init = 6,
    Oracle = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(master, purpose, tags...)`.
pub fn stream(master: u64, purpose: Purpose, tags: &[u64]) -> ChaCha8Rng {
    let mut state = master;
    let mut acc = splitmix64(&mut state) ^ purpose as u64;
    for &t in tags {
        state ^= t.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        acc = acc.rotate_left(17) ^ splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    let mut s = acc ^ master.rotate_left(32);
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Plain seeded generator for tests and benches.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
