//! Counter-based random substreams.
//!
//! Every trace owns two ChaCha8 streams selected by `(seed, stream id)`:
//! one for the qubit evolution and one for impact arrivals. ChaCha's
//! 64-bit stream selector makes the substreams independent of the order in
//! which traces are generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Qubit = 0,
    Impacts = 1,
}

pub fn substream(seed: u64, trace_index: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trace_index << 1) | purpose as u64);
    rng
}

/// Maps a probability onto the 32-bit comparison threshold used by the
/// per-cycle samplers: an event occurs when a uniform `u32` is below it.
#[inline]
pub fn threshold_u32(p: f64) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        1 << 32
    } else {
        (p * 4_294_967_296.0).round() as u64
    }
}
