//! Simulation toolkit for distributed probabilistic inference on unreliable
//! networks.
//!
//! The crate is organized in layers:
//!
//! * [`gauss`] — Gaussian factors in information form, the numeric substrate.
//! * [`model`] — probabilistic models, external junction trees, and the
//!   reparameterization that turns a factored prior into clique marginals
//!   ready for distribution across a network.
//! * [`plf`] — prior/likelihood factor pairs and model fragments, the algebra
//!   that lets partial, redundant pieces of a model be combined and
//!   summarized without double-counting.
//! * [`sumprod`] — the classical sum-product message computations, kept as a
//!   baseline inference layer.
//! * [`netsim`] — a deterministic discrete-event network simulator with lossy
//!   broadcast links, interference windows, and node failures.
//! * [`overlay`] — the per-node protocol stack: link estimation, spanning
//!   tree formation, network junction tree formation, and tree cost
//!   optimization.
//! * [`robust`] — the robust message passing inference layer built on model
//!   fragments.
//! * [`harness`] — scenario files, model generators, centralized oracles,
//!   metrics, and the end-to-end run driver used by the command line tool.
//! * [`batch`] — data-parallel execution of independent runs (rayon when the
//!   `parallel` feature is enabled, sequential otherwise).

pub mod batch;
pub mod gauss;
pub mod harness;
pub mod model;
pub mod netsim;
pub mod overlay;
pub mod plf;
pub mod robust;
pub mod sumprod;
pub(crate) mod util;

use std::fmt;

/// Identifier of a network node.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Identifier of a measurement within a model.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct MeasId(pub u32);

impl fmt::Display for MeasId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}
