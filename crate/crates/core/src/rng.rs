//! Counter-based RNG streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, domain, major, minor)`; for MC passes that is
//! `(base_seed, GATES, pass_index, layer_index)`. A stream depends only on
//! its key, so work can be split across threads in any order without
//! changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Shuffle = 2,
    TrainGates = 3,
    TrainDropout = 4,
    Gates = 5,
    Dropout = 6,
    VerifyFirst = 7,
    VerifySecond = 8,
    Data = 9,
    Split = 10,
}

pub type Stream = ChaCha8Rng;

/// The stream for `(seed, domain, major, minor)`.
pub fn stream(seed: u64, domain: Domain, major: u64, minor: u64) -> Stream {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&major.to_le_bytes());
    key[24..32].copy_from_slice(&minor.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
