//! Seedable random streams and the seed-derivation scheme.
//!
//! Every source of randomness is a [`RngStream`] (ChaCha with 8 rounds),
//! created from a 64-bit seed. Seeds for child streams are derived with
//! [`mix`], so trials and per-guess substreams are statistically independent
//! yet fully determined by one base seed. Nothing here depends on thread
//! scheduling: a benchmark run with the same base seed produces identical
//! draws whether trials run serially or in parallel.
//!
//! Stream layout used by the higher layers:
//!
//! * trial `i` draws from `stream(mix(base_seed, i))`;
//! * within one experiment, one `u64` is taken from the trial stream as a
//!   label, and guess `g` draws from `stream(mix(label, g))`;
//! * all remaining draws (prior sampling, outcome simulation, resampling)
//!   come from the trial stream in program order.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// The concrete RNG used throughout the crate.
pub type RngStream = ChaCha8Rng;

/// Derives a child seed from a parent seed and a stream index.
///
/// This is the splitmix64 output permutation applied to the parent advanced
/// by `index + 1` steps of the golden-gamma increment. It decorrelates
/// nearby `(base, index)` pairs and never maps `(base, 0)` to `base`.
pub fn mix(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Creates a stream from a 64-bit seed.
pub fn stream(seed: u64) -> RngStream {
    RngStream::seed_from_u64(seed)
}

/// The stream owned by one benchmark trial.
pub fn trial_stream(base_seed: u64, trial_id: u64) -> RngStream {
    stream(mix(base_seed, trial_id))
}
