//! Deterministic random streams.
//!
//! Every random consumer draws from a ChaCha8 generator keyed by the run seed and a
//! stream id. ChaCha is counter based, so stream `k` of seed `s` produces the same
//! sequence on every platform and regardless of how many other streams are in use.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream id layout. Slots get two streams each (environment and action sampling);
// the remaining ids are spread far enough apart not to collide for any sane slot count.
pub(crate) const ENV_STREAM_BASE: u64 = 0;
pub(crate) const ACTION_STREAM_BASE: u64 = 1 << 32;
pub(crate) const INIT_STREAM: u64 = 1 << 40;
pub(crate) const SHUFFLE_STREAM: u64 = (1 << 40) + 1;
pub(crate) const EVAL_STREAM_BASE: u64 = 1 << 48;
