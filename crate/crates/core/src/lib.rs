//! Example ordering for permutation-based SGD and client ordering for
//! regularized-participation federated learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`perm`]: permutations with eager inverses and ±1 sign sequences.
//! - [`objectives`]: diagonal quadratic ensembles with closed-form gradients,
//!   optimum and smoothness constants.
//! - [`balancing`]: the self-balancing walk and the norm-greedy sign rule.
//! - [`ordering`]: `Reorder`, `BasicBR`, `PairBR` and the deterministic
//!   balancing-reordering inequalities.
//! - [`strategies`]: the orderers plugged into the epoch loop (AP, RR,
//!   IG/SO/NP, GraB-proto, PairGraB-proto, GraB, PairGraB).
//! - [`sgd`] and [`fl`]: the two training loops, producing [`trace::EpochTrace`] rows.
//! - [`metrics`]: order error, herding error, parameter deviation, recursion
//!   checks and convergence-bound evaluation.

pub mod balancing;
pub mod error;
pub mod fl;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod ordering;
pub mod perm;
pub mod sgd;
pub mod strategies;
pub mod trace;

pub use error::{Error, Result};
pub use linalg::Norm;
pub use perm::{Permutation, Sign, SignSequence};

use rand::SeedableRng;

/// The random source used by every run. Seeded runs are bit-reproducible.
pub type RunRng = rand_chacha::ChaCha8Rng;

/// Builds the run random source from a seed.
pub fn seeded_rng(seed: u64) -> RunRng {
    RunRng::seed_from_u64(seed)
}
