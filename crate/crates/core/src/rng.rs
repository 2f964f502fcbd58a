//! Seeded randomness.
//!
//! Every random draw in this crate comes from ChaCha8 (a counter-based
//! stream cipher generator, `rand_chacha::ChaCha8Rng`), whose output is
//! fixed by its seed on every platform. Independent sub-streams, such as one
//! per frame, are derived from `(seed, stream)` with ChaCha's stream
//! selector, so work can be split across threads without changing results.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as SeededRng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
