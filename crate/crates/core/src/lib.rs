//! Boltzmann-distributed QUBO models over tokenized passwords.
//!
//! The pipeline is split into small, file-friendly stages:
//!
//! - [`corpus`]: load printable-ASCII password lists, filter by length, build
//!   cross-validation folds.
//! - [`tokenizer`]: byte-pair-encoding vocabulary with deterministic
//!   tokenize/detokenize.
//! - [`encoding`]: token index to bit-block maps (one-hot, binary, stacked
//!   one-hot) and password-level encode/decode with repair.
//! - [`boltzmann`]: QUBO energy, exact Boltzmann distribution for small `n`,
//!   single-site Gibbs sampling.
//! - [`training`]: KL-gradient descent with ADAM.
//! - [`placement`]: force-directed atom placement, device constraint checks,
//!   blockade graphs and a blockade-respecting sampler.
//! - [`evaluate`]: edit distance, BK-tree nearest neighbour search, overlap
//!   score and the uniform-token baseline.

pub mod boltzmann;
pub mod corpus;
pub mod encoding;
mod error;
pub mod evaluate;
pub mod placement;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded random source used by every stochastic stage.
pub type Rng = ChaCha8Rng;

/// Builds the generator for `seed` on an independent `stream`.
///
/// Streams let parallel workers (chains, folds) draw from disjoint sequences
/// while staying reproducible regardless of thread scheduling.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
