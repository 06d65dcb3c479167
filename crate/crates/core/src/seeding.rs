//! Derivation of independent stream seeds from one run seed.
//!
//! splitmix64 on (base, stream) keeps every random stream (data generation,
//! batch order, relabeling, Bernoulli masks, MIA subsampling, ...)
//! decorrelated while staying reproducible from a single integer.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for the given stream id.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Well-known stream ids used across the crate.
pub mod streams {
    pub const DATASET: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_BATCHES: u64 = 4;
    pub const RELABEL: u64 = 5;
    pub const BATCH_U: u64 = 6;
    pub const BATCH_C: u64 = 7;
    pub const BERNOULLI: u64 = 8;
    pub const MIA: u64 = 9;
}
