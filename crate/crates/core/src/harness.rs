//! Experiment harness: model generation, centralized oracles, scenario
//! files, structure checks, the end-to-end run driver, and offline tree
//! cost baselines.
//!
//! Everything here sits above the protocol stack and the inference lanes.
//! The oracles are deliberately dense: they recompute reference answers
//! with plain matrix algebra so that agreement with the distributed
//! machinery is evidence, not circularity.

mod calib;
mod checks;
mod opt_baseline;
mod oracle;
mod run;
mod scenario;

pub use calib::{gen_calibration, CalibParams, CalibrationModel, GraphSpec};
pub use checks::{snapshot, StructureSnapshot};
pub use opt_baseline::{annealed_best_cost, exhaustive_best_cost, greedy_quality_tree, spanning_tree_cost};
pub use oracle::{bias_means, fragment_posterior, joint_posterior, rms};
pub use run::{drive, run_scenario, DriveOutcome, Lane, MetricsRow, QueryBelief, RunMetrics, RunOutcome};
pub use scenario::{FailSpec, LinkSpec, Scenario};

use thiserror::Error;

use crate::gauss::GaussError;
use crate::model::ModelError;
use crate::robust::RobustError;
use crate::sumprod::SpError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dense algebra failed: {0}")]
    Gauss(#[from] GaussError),
    #[error("model construction failed: {0}")]
    Model(#[from] ModelError),
    #[error("robust lane failed: {0}")]
    Robust(#[from] RobustError),
    #[error("baseline lane failed: {0}")]
    Sumprod(#[from] SpError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}
