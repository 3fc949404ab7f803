//! Keyed random substreams.
//!
//! Every random draw in a run comes from a stream keyed by
//! `(seed, tick, vehicle, purpose, salt)`, so results do not depend on the
//! order in which vehicles or coalitions are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    /// Tie-breaking among equal-valued candidate states.
    TieBreak = 1,
    /// The ε perturbation of coalition priorities.
    Priority = 2,
    /// Tie-breaking while re-selecting inside a coalition.
    Resolve = 3,
    /// Scenario generation.
    Generate = 4,
}

pub fn substream(seed: u64, tick: u64, id: u32, purpose: Purpose, salt: u32) -> ChaCha8Rng {
    keyed(seed, tick, 0, id, purpose, salt)
}

fn keyed(seed: u64, tick: u64, round: u32, id: u32, purpose: Purpose, salt: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tick.to_le_bytes());
    key[16..20].copy_from_slice(&id.to_le_bytes());
    key[20..24].copy_from_slice(&(purpose as u32).to_le_bytes());
    key[24..28].copy_from_slice(&salt.to_le_bytes());
    key[28..32].copy_from_slice(&round.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stream factory for one tick of one run.
#[derive(Debug, Clone, Copy)]
pub struct TickStreams {
    pub seed: u64,
    pub tick: u64,
    /// Resolution round within the tick.
    pub round: u32,
}

impl TickStreams {
    pub fn new(seed: u64, tick: u64) -> Self {
        TickStreams { seed, tick, round: 0 }
    }

    pub fn with_round(self, round: u32) -> Self {
        TickStreams { round, ..self }
    }

    pub fn rng(&self, id: VehicleId, purpose: Purpose, salt: u32) -> ChaCha8Rng {
        keyed(self.seed, self.tick, self.round, id.0, purpose, salt)
    }
}
