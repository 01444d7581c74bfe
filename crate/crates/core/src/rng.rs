//! Named random substreams derived from a single experiment seed.
//!
//! Every stochastic component draws from its own ChaCha stream keyed by
//! `(seed, purpose)` and indexed by a caller-chosen counter (an anchor id, an
//! epoch, a layer). Draw order in one component never perturbs another, and
//! per-anchor streams make results independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Mask = 2,
    PairDraw = 3,
    Split = 4,
    Generator = 5,
}

pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Index for a per-anchor stream within one mining round.
pub(crate) fn round_anchor_index(round: u64, anchor: usize) -> u64 {
    (round << 32) | anchor as u64
}
