//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! master seed and a 64-bit stream id built from `(replica, purpose)`. ChaCha
//! is counter based, so distinct stream ids give independent sequences and a
//! replica's draws never depend on how replicas are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a stream is used for. Keeps the initial-condition draws of a replica
/// independent from the dynamics draws of the same replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Initial = 1,
    Dynamics = 2,
    Oracle = 3,
    Sde = 4,
    Auxiliary = 5,
}

pub fn stream(seed: u64, replica: u64, purpose: Purpose) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(replica, purpose));
    rng
}

/// The ChaCha stream id of `(replica, purpose)`. Together with the master
/// seed this pins every draw of a replica, so manifests record it.
pub fn stream_id(replica: u64, purpose: Purpose) -> u64 {
    (replica << 8) | purpose as u64
}
