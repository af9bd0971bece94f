//! Seeded generators and per-slot stream derivation.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator used everywhere in the crate.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a base key from `rng` for a batch of slot streams. Consumes exactly
/// one `u64` from `rng`.
pub fn stream_key(rng: &mut Rng) -> u64 {
    rng.random()
}

/// Independent stream `slot` under `key`. Streams for distinct slots never
/// overlap, so slots can be processed in any order or concurrently.
pub fn slot_stream(key: u64, slot: usize) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(key);
    r.set_stream(slot as u64);
    r
}
