//! The partial-information algebra: prior/likelihood factors and fragments.
//!
//! Distributed nodes never hold the whole model. What they hold, exchange,
//! and refine are [`ModelFragment`]s: sets of [`PlFactor`]s, each pairing a
//! proper prior density over some variables with the likelihood of the
//! measurements folded into it so far. The operations here let fragments be
//! merged without double-counting evidence, reduced to message-sized
//! summaries, and read out as beliefs that are valid densities even when the
//! information they rest on is incomplete or arrived out of order.

mod factor;
mod fragment;

pub use factor::{pl_combine, pl_summary, PlFactor, PlfError};
pub use fragment::{ModelFragment, REPLICA_TOL};
