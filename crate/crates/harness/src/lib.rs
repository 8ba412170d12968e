//! Experiment harness: configuration, the training loop, comparisons,
//! diagnostics and checkpoints.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod error;
pub mod histogram;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

use rayon::prelude::*;
use surge_core::theory::{random_model, run_experiment, TheoryReport};

/// One report per random moment model: `models` models of dimension `d`,
/// model `i` drawn with seed `seed + i` and sampled with the same seed.
pub fn run_theory(d: usize, samples: usize, seed: u64, models: usize, resolution: usize) -> Result<Vec<TheoryReport>> {
    if d == 0 || samples == 0 || models == 0 {
        return Err(HarnessError::config("theory needs d, samples and models >= 1"));
    }
    (0..models as u64)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i);
            let model = random_model(d, s)?;
            Ok(run_experiment(&model, samples, s, resolution)?)
        })
        .collect()
}
