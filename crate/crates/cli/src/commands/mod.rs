pub mod eval;
pub mod register;
pub mod synth;
pub mod train;
pub mod warp;

use morphreg::{LossWeights, SimKind};

use crate::error::{CliError, CliResult};

/// Smoothness weight used when `--lambda` is omitted.
pub fn default_lambda(sim: SimKind) -> f64 {
    match sim {
        SimKind::Mse => 0.02,
        SimKind::Cc => 1.0,
    }
}

pub fn parse_sim(s: &str) -> CliResult<SimKind> {
    s.parse().map_err(|e: morphreg::Error| CliError::Usage(e.to_string()))
}

pub fn unsupervised_weights(lambda: f64, cc_window: usize) -> CliResult<LossWeights> {
    LossWeights::new(lambda, morphreg::AuxWeight::Weight(0.0), cc_window).map_err(|e| CliError::Usage(e.to_string()))
}
