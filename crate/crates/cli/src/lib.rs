//! Experiment harness around `gradorder-core`: configuration, multi-seed
//! comparisons, the lemma battery, NP construction and SVG charts.

pub mod config;
pub mod error;
pub mod experiment;
pub mod lemmas;
pub mod plot;
pub mod summary;

use gradorder_core::objectives::generate_ensemble;
use gradorder_core::strategies::{default_np_rounds, nice_permutation, NiceBuild};
use gradorder_core::seeded_rng;
use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, ExperimentOutcome};
pub use lemmas::{verify_lemmas, LemmaParams, LemmaReport};

/// Output of the `np-build` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpReport {
    pub n: usize,
    pub d: usize,
    pub ensemble_seed: u64,
    pub rounds: usize,
    pub x0: Vec<f64>,
    #[serde(flatten)]
    pub build: NiceBuild,
}

/// Builds the NP permutation for the configured ensemble at `x0`.
pub fn np_build(cfg: &ExperimentConfig, seed: u64) -> CliResult<NpReport> {
    cfg.validate()?;
    let n = cfg.ensemble.n;
    if !n.is_multiple_of(2) {
        return Err(CliError::Config(format!("the NP construction needs an even N, got {n}")));
    }
    let ens = generate_ensemble(&cfg.ensemble.params(), &mut seeded_rng(cfg.ensemble.seed))?;
    let x0 = cfg.engine.x0.resolve(cfg.ensemble.d)?;
    let rounds = cfg.ordering.np_rounds.unwrap_or_else(|| default_np_rounds(n));
    let build = nice_permutation(&ens, &x0, rounds, &cfg.balance, &mut seeded_rng(seed))?;
    Ok(NpReport { n, d: cfg.ensemble.d, ensemble_seed: cfg.ensemble.seed, rounds, x0, build })
}
