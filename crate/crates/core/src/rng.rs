//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded with
//! `seed ^ stream_id`, so results never depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STREAM_SYNTH_LABELS: u64 = 0x5359_4e54_4c42_0001;
pub const STREAM_SYNTH_NOISE: u64 = 0x5359_4e54_4e5a_0002;
pub const STREAM_SYNTH_FEATURES: u64 = 0x5359_4e54_4654_0003;
pub const STREAM_SPLIT: u64 = 0x5350_4c49_5400_0004;
pub const STREAM_IMBALANCE: u64 = 0x494d_4241_4c00_0005;
pub const STREAM_UNIFORM: u64 = 0x554e_4946_0000_0006;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream_id)
}

/// Uniform draw in (0, 1] addressed by `(seed, row_id, class)`.
///
/// The value depends only on its address, so calibration and inference
/// reproduce the same `u` regardless of which rows are scored or in what
/// order.
pub fn uniform_at(seed: u64, row_id: u64, class: usize) -> f64 {
    let mut rng = stream(seed, STREAM_UNIFORM);
    rng.set_stream(row_id);
    // one f64 consumes two 32-bit words
    rng.set_word_pos(2 * class as u128);
    1.0 - rng.gen::<f64>()
}
