//! The per-node protocol stack that turns a lossy broadcast network into a
//! junction tree ready for inference.
//!
//! Three protocols run concurrently on every node, each feeding the next:
//!
//! 1. **Link estimation** ([`links`]): periodic beacons, an EWMA reception
//!    rate per peer, and a silence threshold that declares peers lost.
//! 2. **Spanning tree** ([`tree`]): minimum-id root election with parent
//!    selection by estimated path quality, repaired on loss. Tree edges are
//!    carried entirely by beacons: a node claims its parent, and the parent
//!    derives its child set from those claims.
//! 3. **Network junction tree** ([`jt`]): reachable-variable messages along
//!    tree edges, from which each node derives its clique and separators.
//!
//! On top of the structure, a greedy distributed optimizer ([`opt`])
//! evaluates replacing one node's parent edge at a time, using an
//! evaluation flood that lets out-of-tree listeners price the swap.
//! Reliable delivery for everything except beacons is provided by a
//! latest-state acknowledge/retransmit transport ([`transport`]).
//!
//! The inference layer itself is pluggable: anything implementing
//! [`InferenceLayer`] rides the same structure, so the robust lane and the
//! classical baseline can be compared on identical traffic.

mod jt;
mod links;
mod msg;
mod node;
mod opt;
mod transport;
mod tree;

#[cfg(test)]
mod sim_tests;

use std::collections::BTreeMap;

use crate::gauss::Scope;
use crate::netsim::WireSize;
use crate::NodeId;

pub use jt::{
    central_junction, cliques_satisfy_rip, gaussian_payload_bytes, tree_cost, CentralJunction,
};
pub use msg::{sumprod_payload_bytes, Beacon, Body, Channel, EvalReply, EvalRequest, WireMsg};
pub use node::{OverlayNode, ProtocolConfig};

/// What the structural stack asks of an inference lane.
///
/// The overlay tells the layer who its tree neighbors are and which
/// separator each edge carries, hands it every payload that arrives, and
/// drains whatever the layer wants (re)sent. The layer owns its own change
/// detection: `drain_outgoing` should return a payload for a neighbor only
/// when it differs materially from what was last returned for that
/// neighbor, or the overlay will happily retransmit noise forever.
pub trait InferenceLayer {
    type Payload: Clone + WireSize;

    /// The current tree neighbors and the separator scope toward each.
    /// Neighbors absent from the map have detached: the layer must discard
    /// their stored messages, and forget what it last sent them, so that a
    /// later reattachment resends.
    fn set_separators(&mut self, seps: BTreeMap<NodeId, Scope>);

    /// A payload arrived from a current neighbor.
    fn receive(&mut self, from: NodeId, payload: Self::Payload);

    /// The peer discarded this edge's state: forget what was last sent to
    /// it, so the next drain resends even if nothing changed locally.
    fn invalidate(&mut self, peer: NodeId);

    /// Messages to (re)send now, one per neighbor at most. Called after
    /// every input that may have changed the layer's state.
    fn drain_outgoing(&mut self) -> Vec<(NodeId, Self::Payload)>;
}
