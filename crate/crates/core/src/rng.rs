//! Seed derivation.
//!
//! All randomness comes from ChaCha20, a counter-based generator whose output is
//! identical on every platform. Streams are split in two levels:
//!
//! 1. `trial_seed(master, trial)` mixes the master seed and the trial index with
//!    SplitMix64 into a 64-bit per-trial seed.
//! 2. `substream(trial_seed, purpose)` keys ChaCha20 with the per-trial seed and
//!    selects the 64-bit ChaCha stream id given by [`Purpose`], so UE placement,
//!    fading, pilot noise and solver initialisation never share a keystream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Placement = 0,
    Fading = 1,
    PilotNoise = 2,
    SolverInit = 3,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(master_seed: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ trial.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn substream(seed: u64, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}
