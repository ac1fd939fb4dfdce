//! Seed sweeps: run one scenario many times and summarize each run.
//!
//! Runs are independent, so with the `parallel` feature they fan out across
//! a thread pool; without it the same sweep runs sequentially. Both paths
//! produce identical results in the same order, because each run is a pure
//! function of its scenario.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::harness::{run_scenario, HarnessError, Lane, RunOutcome, Scenario};

/// The tail of one run, boiled down for cross-seed comparison.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub seed: u64,
    /// Lane RMS error at the final tick.
    pub final_rms: f64,
    /// What an oracle with every reachable measurement scores at that tick.
    pub oracle_rms: f64,
    pub invalid_at_end: usize,
    pub tree_valid_at_end: bool,
    pub rip_valid_at_end: bool,
    pub bytes_sent_total: u64,
    pub survivors: usize,
}

impl RunSummary {
    fn new(scn: &Scenario, out: &RunOutcome) -> Self {
        let last = out.metrics.rows.last();
        RunSummary {
            seed: scn.seed,
            final_rms: last.map_or(f64::NAN, |r| match scn.lane {
                Lane::Robust => r.rms_robust,
                Lane::Sumprod => r.rms_sumprod,
            }),
            oracle_rms: last.map_or(f64::NAN, |r| r.rms_global_oracle),
            invalid_at_end: last.map_or(0, |r| r.invalid_belief_count),
            tree_valid_at_end: last.is_some_and(|r| r.spanning_tree_valid),
            rip_valid_at_end: last.is_some_and(|r| r.rip_valid),
            bytes_sent_total: last.map_or(0, |r| r.bytes_sent_total),
            survivors: out.alive_at_end.iter().filter(|&&a| a).count(),
        }
    }
}

fn run_one(base: &Scenario, seed: u64) -> Result<RunSummary, HarnessError> {
    let mut scn = base.clone();
    scn.seed = seed;
    let out = run_scenario(&scn)?;
    Ok(RunSummary::new(&scn, &out))
}

/// Run the scenario once per seed on the calling thread, whatever the
/// build features say.
pub fn run_batch_sequential(
    base: &Scenario,
    seeds: &[u64],
) -> Result<Vec<RunSummary>, HarnessError> {
    seeds.iter().map(|&s| run_one(base, s)).collect()
}

/// Run the scenario once per seed, in seed order, fanned out across the
/// thread pool.
#[cfg(feature = "parallel")]
pub fn run_batch(base: &Scenario, seeds: &[u64]) -> Result<Vec<RunSummary>, HarnessError> {
    seeds.par_iter().map(|&s| run_one(base, s)).collect()
}

/// Run the scenario once per seed, in seed order. Sequential build: same
/// contract, one thread.
#[cfg(not(feature = "parallel"))]
pub fn run_batch(base: &Scenario, seeds: &[u64]) -> Result<Vec<RunSummary>, HarnessError> {
    run_batch_sequential(base, seeds)
}
