//! Deterministic per-replicate random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the master seed (and a lane
//! tag) with the replicate index selecting the ChaCha stream. Draws are
//! therefore a pure function of `(master_seed, stream_id, lane)` and no
//! global state is involved.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lane used for assignment/outcome draws.
pub const LANE_DESIGN: u64 = 0;
/// Lane used for entry and response-time draws in delayed trials.
pub const LANE_TIMING: u64 = 1;

#[derive(Debug, Clone)]
pub struct RandomStream {
    master_seed: u64,
    stream_id: u64,
    lane: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self::with_lane(master_seed, stream_id, LANE_DESIGN)
    }

    pub fn with_lane(master_seed: u64, stream_id: u64, lane: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&lane.to_le_bytes());
        key[16..24].copy_from_slice(b"alloclab");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        RandomStream {
            master_seed,
            stream_id,
            lane,
            rng,
        }
    }

    /// A sibling stream for the same replicate on another lane.
    pub fn lane(&self, lane: u64) -> Self {
        Self::with_lane(self.master_seed, self.stream_id, lane)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn lane_id(&self) -> u64 {
        self.lane
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Index `k` with probability `weights[k] / sum(weights)`, one uniform draw.
    ///
    /// Returns `None` when the weights have no positive mass.
    pub fn weighted_index(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        let u = self.uniform() * total;
        let mut acc = 0.0;
        let mut last_positive = None;
        for (k, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last_positive = Some(k);
                if u < acc {
                    return Some(k);
                }
            }
        }
        // rounding at the top end of the cumulative sum
        last_positive
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
