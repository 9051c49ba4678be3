//! Deterministic random streams.
//!
//! Every stochastic component draws from a [`Stream`] derived from
//! `(master seed, lane, index)`. Derivation is a pure function, so rollouts
//! and nested Monte Carlo loops can fan out across workers and still produce
//! bit-identical results regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for seed mixing.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream from a master seed and two lane indices.
pub fn substream(master: u64, lane: u64, index: u64) -> Stream {
    let mut seed = [0u8; 32];
    let a = mix(master ^ mix(lane));
    let b = mix(a ^ mix(index));
    let c = mix(b.wrapping_add(0xA5A5_A5A5_A5A5_A5A5));
    let d = mix(c ^ master.rotate_left(17));
    seed[0..8].copy_from_slice(&a.to_le_bytes());
    seed[8..16].copy_from_slice(&b.to_le_bytes());
    seed[16..24].copy_from_slice(&c.to_le_bytes());
    seed[24..32].copy_from_slice(&d.to_le_bytes());
    Stream::from_seed(seed)
}

/// Top-level stream for a master seed.
pub fn master_stream(master: u64) -> Stream {
    substream(master, 0, 0)
}
