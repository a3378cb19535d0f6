//! Per-entity random substreams.
//!
//! Every entity draws from its own ChaCha8 stream keyed by `(root seed,
//! entity id)`; the position in the stream is the draw counter. Identical
//! triples always yield identical draws, and draws by one entity never
//! perturb another entity's sequence.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::ids::NodeId;

/// Reproducible random substream of one entity.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    entity: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, entity: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
        rng.set_stream(entity);
        Self { root_seed, entity, draws: 0, rng }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn entity(&self) -> u64 {
        self.entity
    }

    /// Number of 64-bit draws taken so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// True with probability `p`. `p <= 0` never fires, `p >= 1` always does;
    /// both still consume one draw so stream positions stay aligned.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Lemire-style rejection keeps the distribution exact.
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Registry of forked streams; forking an entity twice resumes its counter.
#[derive(Debug, Clone)]
pub struct RngStreams {
    root_seed: u64,
    streams: BTreeMap<u64, RngStream>,
}

impl RngStreams {
    pub fn new(root_seed: u64) -> Self {
        Self { root_seed, streams: BTreeMap::new() }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn fork(&mut self, entity: NodeId) -> &mut RngStream {
        self.fork_raw(u64::from(entity.0))
    }

    pub fn fork_raw(&mut self, entity: u64) -> &mut RngStream {
        let seed = self.root_seed;
        self.streams.entry(entity).or_insert_with(|| RngStream::new(seed, entity))
    }
}
