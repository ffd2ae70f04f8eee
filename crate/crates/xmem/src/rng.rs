//! Deterministic RNG stream plumbing.
//!
//! Every (master seed, stream id) pair addresses an independent ChaCha8
//! stream, so replicates can run in any order on any thread count without
//! touching each other's randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Coordinates of one deterministic stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

/// What a stream feeds inside one replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamRole {
    /// The Gaussian field draw.
    Gaussian,
    /// The multiplicative white noise.
    Noise,
}

impl RngSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Stream for one replicate of one window size: window index in the
    /// high 32 bits, 2 * replicate + role below. Ids never collide while
    /// replicate counts stay under 2^31.
    pub fn replicate(master_seed: u64, n_index: usize, replicate: usize, role: StreamRole) -> Self {
        assert!(replicate < (1 << 31), "replicate index overflows the stream layout");
        assert!(n_index < (1 << 32), "window index overflows the stream layout");
        let role_bit = match role {
            StreamRole::Gaussian => 0u64,
            StreamRole::Noise => 1u64,
        };
        let id = ((n_index as u64) << 32) | ((replicate as u64) << 1) | role_bit;
        Self::new(master_seed, id)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
