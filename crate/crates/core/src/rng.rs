//! Seeded, splittable random streams.
//!
//! Every (seed, purpose, client) triple maps to its own ChaCha8 stream, so
//! a client's draws do not depend on how many other clients exist or in
//! what order they are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Timing = 1,
    GradientNoise = 2,
    Partition = 3,
}

pub fn stream(seed: u64, purpose: StreamPurpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) | (index & ((1 << 40) - 1)));
    rng
}

/// One stream per client for the given purpose.
pub fn client_streams(seed: u64, purpose: StreamPurpose, n_clients: usize) -> Vec<StreamRng> {
    (0..n_clients)
        .map(|k| stream(seed, purpose, k as u64))
        .collect()
}
