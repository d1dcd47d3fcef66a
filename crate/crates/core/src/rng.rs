//! Named random streams.
//!
//! Every consumer of randomness derives its generator from the root seed and
//! a fixed stream id, so changing how much randomness one component consumes
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    /// Class means, pair tables, object embeddings.
    Geometry = 1,
    /// Training-split scenes.
    Generation = 2,
    /// Held-out scenes drawn from the same geometry.
    TestGeneration = 3,
    /// Scene order and batch formation.
    Shuffle = 4,
    /// Query-set draws and background retention.
    Sampling = 5,
    /// Model parameter initialisation.
    Init = 6,
    /// Monte Carlo diagnostics.
    Diagnostics = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
