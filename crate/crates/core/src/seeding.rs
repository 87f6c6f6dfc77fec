//! Per-user random streams.
//!
//! Every random draw in an experiment comes from a stream keyed by
//! `(master_seed, repetition, user, purpose)`, so results do not depend on
//! thread count or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hashing::mix;

pub type UserRng = ChaCha8Rng;

/// Stream purposes. Distinct values keep the streams of one user independent.
pub mod purpose {
    pub const DATASET: u64 = 1;
    pub const REPORT: u64 = 2;
    pub const BIA: u64 = 3;
    pub const MGA: u64 = 4;
    pub const ADVISOR: u64 = 5;
    pub const EXTRA_ROUNDS: u64 = 6;
    pub const ATTACKERS: u64 = 7;
}

pub fn stream_seed(master: u64, repetition: u64, user: u64, purpose: u64) -> u64 {
    mix(master ^ mix(repetition.wrapping_add(1)) ^ mix(user.wrapping_add(1) ^ mix(purpose)))
}

pub fn user_rng(master: u64, repetition: u64, user: u64, purpose: u64) -> UserRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, repetition, user, purpose))
}

/// Stream for whole-population draws (dataset generation) in one repetition.
pub fn global_rng(master: u64, repetition: u64, purpose: u64) -> UserRng {
    user_rng(master, repetition, u64::MAX, purpose)
}
