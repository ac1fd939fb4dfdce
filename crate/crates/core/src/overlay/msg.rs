//! Wire format of the protocol stack, with explicit byte accounting.
//!
//! Everything rides the broadcast radio. A message is either a true
//! broadcast (beacons) or addressed to one peer, in which case other
//! receivers drop it on arrival. Byte sizes are what the cost model and the
//! per-node bandwidth counters see; the accounting scheme is:
//!
//! * every message pays a 16-byte header (sender, destination, kind, flags)
//! * a variable id costs 4 bytes, a counter 8, a float 8
//! * a Gaussian over `d` scalar dimensions costs `16 + 8·(d + d(d+1)/2)`
//!   (information vector plus the upper triangle of the precision matrix,
//!   plus its own header); see [`gaussian_payload_bytes`]
//!
//! [`gaussian_payload_bytes`]: super::gaussian_payload_bytes

use crate::gauss::Scope;
use crate::netsim::WireSize;
use crate::NodeId;

use super::jt::gaussian_payload_bytes;

pub const HEADER_BYTES: usize = 16;

/// Reliable-channel identifier. Each (peer, channel) pair holds at most one
/// in-flight payload; newer payloads supersede unacknowledged older ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channel {
    /// Reachable-variable scopes of the junction-tree protocol.
    RVars,
    /// Inference payloads (separator messages of either lane).
    Inference,
    /// Evaluation flood relays and replies of the optimizer.
    Eval,
}

/// One node's periodic heartbeat: link-estimation sequence number plus its
/// entire view of the spanning tree. Parent claims in beacons are the tree
/// edges; there is no separate join/leave handshake.
#[derive(Clone, Debug, PartialEq)]
pub struct Beacon {
    /// Monotone per-sender counter; gaps reveal losses to the estimator.
    pub seq: u64,
    /// The sender's current root candidate.
    pub root: NodeId,
    /// Freshness stamp originated by the root and relayed outward.
    pub root_seq: u64,
    /// The sender's chosen parent, if any.
    pub parent: Option<NodeId>,
    /// The sender's path to the root, starting at the sender.
    pub path: Vec<NodeId>,
    /// Product of estimated link rates along `path`.
    pub path_rate: f64,
}

/// Body of an optimizer evaluation flood, relayed away from the originator
/// through the far side of the tree. See the optimizer module for the
/// accounting it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRequest {
    pub originator: NodeId,
    pub eval_id: u64,
    /// Epoch of the originator's tree view when the evaluation started.
    pub epoch: u64,
    /// Variables the originator's side injects over the edge under
    /// evaluation (its reachable set toward its parent).
    pub moving_vars: Scope,
    /// The recomputed reachable set flowing along the flood path, with the
    /// originator's contribution re-routed.
    pub r_away: Scope,
    /// Cost delta accumulated over the edges crossed so far.
    pub delta: f64,
}

/// Direct out-of-tree reply from a node that can hear the originator.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReply {
    pub eval_id: u64,
    pub epoch: u64,
    /// Accumulated delta including everything but the originator's own half
    /// of the proposed new edge.
    pub delta: f64,
    /// Scalar dimension of the separator the new edge would carry, so the
    /// originator can price its own half.
    pub new_sep_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body<P> {
    Beacon(Beacon),
    /// Reliable: reachable-variable scope toward the destination.
    RVars { scope: Scope, reset: bool, version: u64 },
    /// Reliable: inference payload toward the destination.
    Inference { payload: P, version: u64 },
    /// Reliable: optimizer flood relay.
    EvalRequest { req: EvalRequest, version: u64 },
    /// Reliable: optimizer reply to the originator.
    EvalReply { reply: EvalReply, version: u64 },
    /// Acknowledges the given version on a reliable channel.
    Ack { channel: Channel, version: u64 },
}

impl<P> Body<P> {
    /// The reliable channel this body belongs to, if any.
    pub fn channel(&self) -> Option<Channel> {
        match self {
            Body::Beacon(_) | Body::Ack { .. } => None,
            Body::RVars { .. } => Some(Channel::RVars),
            Body::Inference { .. } => Some(Channel::Inference),
            Body::EvalRequest { .. } | Body::EvalReply { .. } => Some(Channel::Eval),
        }
    }

    pub fn version(&self) -> Option<u64> {
        match self {
            Body::Beacon(_) => None,
            Body::RVars { version, .. }
            | Body::Inference { version, .. }
            | Body::EvalRequest { version, .. }
            | Body::EvalReply { version, .. }
            | Body::Ack { version, .. } => Some(*version),
        }
    }
}

/// A transmission: who sent it and whom it is for. `to: None` is a true
/// broadcast; addressed messages are dropped by other receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct WireMsg<P> {
    pub from: NodeId,
    pub to: Option<NodeId>,
    pub body: Body<P>,
}

fn scope_bytes(s: &Scope) -> usize {
    4 * s.len()
}

impl<P: WireSize> WireSize for WireMsg<P> {
    fn wire_bytes(&self) -> usize {
        HEADER_BYTES
            + match &self.body {
                Body::Beacon(b) => 4 + 8 + 4 + 8 + 8 + 4 * b.path.len(),
                Body::RVars { scope, .. } => 8 + 1 + scope_bytes(scope),
                Body::Inference { payload, .. } => 8 + payload.wire_bytes(),
                Body::EvalRequest { req, .. } => {
                    8 + 4 + 8 + 8 + 8 + scope_bytes(&req.moving_vars) + scope_bytes(&req.r_away)
                }
                Body::EvalReply { .. } => 8 + 8 + 8 + 8 + 4,
                Body::Ack { .. } => 8 + 1,
            }
    }
}

/// Byte size of a separator message carrying a plain Gaussian, reused by
/// the classical lane's payloads and by the tree cost model.
pub fn sumprod_payload_bytes(scope: &Scope) -> usize {
    gaussian_payload_bytes(scope.total_dim())
}
