//! Latest-state reliable delivery over the lossy radio.
//!
//! Each (peer, channel) pair carries at most one outstanding payload. A
//! newer payload supersedes an unacknowledged older one: the protocols
//! above only ever care about the freshest state, so there is no queue and
//! no head-of-line blocking. Unacknowledged slots are retransmitted on a
//! timer until acked or until the peer is dropped. Versions are assigned
//! from one per-node monotone counter, so a receiver can discard
//! duplicates and stale deliveries with a single comparison per slot, and
//! an ack names exactly the version it confirms.

use std::collections::BTreeMap;

use crate::NodeId;

use super::msg::{Body, Channel};

/// Tries per eval-channel slot before giving up on an unresponsive peer.
const EVAL_MAX_TX: u32 = 8;

struct OutSlot<P> {
    body: Body<P>,
    version: u64,
    acked: bool,
    last_tx: f64,
    tx_count: u32,
}

pub(super) struct Transport<P> {
    out: BTreeMap<(NodeId, Channel), OutSlot<P>>,
    delivered: BTreeMap<(NodeId, Channel), u64>,
    next_version: u64,
    period: f64,
}

impl<P: Clone> Transport<P> {
    pub fn new(retransmit_period: f64) -> Self {
        Transport {
            out: BTreeMap::new(),
            delivered: BTreeMap::new(),
            next_version: 1,
            period: retransmit_period,
        }
    }

    /// Stage a payload for reliable delivery, superseding any
    /// unacknowledged predecessor on the same (peer, channel). The body is
    /// built by the caller around the version this assigns, and a copy is
    /// returned for immediate transmission.
    pub fn send(
        &mut self,
        to: NodeId,
        channel: Channel,
        build: impl FnOnce(u64) -> Body<P>,
        now: f64,
    ) -> Body<P> {
        let version = self.next_version;
        self.next_version += 1;
        let body = build(version);
        debug_assert_eq!(body.channel(), Some(channel));
        debug_assert_eq!(body.version(), Some(version));
        self.out.insert(
            (to, channel),
            OutSlot { body: body.clone(), version, acked: false, last_tx: now, tx_count: 1 },
        );
        body
    }

    /// An ack arrived: settle the slot if it names the current version.
    pub fn on_ack(&mut self, from: NodeId, channel: Channel, version: u64) {
        if let Some(slot) = self.out.get_mut(&(from, channel)) {
            if slot.version == version {
                slot.acked = true;
            }
        }
    }

    /// A reliable body arrived. Returns whether it is fresh (not a
    /// duplicate or older than something already delivered). The caller
    /// acks either way; acking a duplicate is what stops retransmissions
    /// whose first ack was lost.
    pub fn on_reliable(&mut self, from: NodeId, channel: Channel, version: u64) -> bool {
        let seen = self.delivered.entry((from, channel)).or_insert(0);
        if version > *seen {
            *seen = version;
            true
        } else {
            false
        }
    }

    /// Retransmit every slot that has been waiting at least a full period.
    /// Eval traffic goes to peers that may never be audible in our
    /// direction, so that channel gets a bounded number of tries; the
    /// structural channels keep retrying until the peer is dropped.
    pub fn tick(&mut self, now: f64) -> Vec<(NodeId, Body<P>)> {
        let mut out = Vec::new();
        self.out.retain(|&(peer, channel), slot| {
            if slot.acked || now - slot.last_tx < self.period - 1e-9 {
                return true;
            }
            if channel == Channel::Eval && slot.tx_count >= EVAL_MAX_TX {
                return false;
            }
            slot.last_tx = now;
            slot.tx_count += 1;
            out.push((peer, slot.body.clone()));
            true
        });
        out
    }

    /// Drop outgoing state toward a peer: all channels, or just one.
    pub fn drop_peer(&mut self, peer: NodeId, channel: Option<Channel>) {
        self.out
            .retain(|&(p, c), _| p != peer || channel.is_some_and(|ch| ch != c));
    }

    /// Is anything still awaiting acknowledgement?
    #[cfg(test)]
    pub fn has_unacked(&self) -> bool {
        self.out.values().any(|s| !s.acked)
    }
}

#[cfg(test)]
mod tests {
    use crate::gauss::Scope;

    use super::*;

    type B = Body<crate::overlay::msg::Beacon>; // payload type irrelevant here

    fn rbody(version: u64) -> B {
        Body::RVars { scope: Scope::empty(), reset: false, version }
    }

    #[test]
    fn retransmits_until_acked() {
        let mut t: Transport<crate::overlay::msg::Beacon> = Transport::new(0.5);
        let peer = NodeId(2);
        let body = t.send(peer, Channel::RVars, rbody, 0.0);
        let v = body.version().unwrap();
        assert!(t.tick(0.4).is_empty(), "not due yet");
        assert_eq!(t.tick(0.5).len(), 1);
        assert_eq!(t.tick(1.0).len(), 1);
        t.on_ack(peer, Channel::RVars, v);
        assert!(t.tick(2.0).is_empty(), "acked slots stay quiet");
        assert!(!t.has_unacked());
    }

    #[test]
    fn newer_payload_supersedes_and_old_ack_is_ignored() {
        let mut t: Transport<crate::overlay::msg::Beacon> = Transport::new(0.5);
        let peer = NodeId(2);
        let v1 = t.send(peer, Channel::RVars, rbody, 0.0).version().unwrap();
        let v2 = t.send(peer, Channel::RVars, rbody, 0.1).version().unwrap();
        assert!(v2 > v1);
        t.on_ack(peer, Channel::RVars, v1);
        assert!(t.has_unacked(), "stale ack must not settle the new payload");
        let retx = t.tick(0.6);
        assert_eq!(retx.len(), 1);
        assert_eq!(retx[0].1.version(), Some(v2));
        t.on_ack(peer, Channel::RVars, v2);
        assert!(!t.has_unacked());
    }

    #[test]
    fn receiver_dedupes_but_not_across_channels() {
        let mut t: Transport<crate::overlay::msg::Beacon> = Transport::new(0.5);
        let peer = NodeId(7);
        assert!(t.on_reliable(peer, Channel::RVars, 3));
        assert!(!t.on_reliable(peer, Channel::RVars, 3), "duplicate");
        assert!(!t.on_reliable(peer, Channel::RVars, 2), "stale");
        assert!(t.on_reliable(peer, Channel::Inference, 2), "other channel");
        assert!(t.on_reliable(peer, Channel::RVars, 5));
    }

    #[test]
    fn dropping_a_peer_stops_its_retransmissions() {
        let mut t: Transport<crate::overlay::msg::Beacon> = Transport::new(0.5);
        let reply = crate::overlay::msg::EvalReply {
            eval_id: 0,
            epoch: 0,
            delta: 0.0,
            new_sep_dim: 0,
        };
        t.send(NodeId(1), Channel::RVars, rbody, 0.0);
        t.send(NodeId(1), Channel::Eval, |v| Body::EvalReply { reply, version: v }, 0.0);
        t.send(NodeId(2), Channel::RVars, rbody, 0.0);
        t.drop_peer(NodeId(1), Some(Channel::RVars));
        let peers: Vec<NodeId> = t.tick(1.0).into_iter().map(|(p, _)| p).collect();
        assert_eq!(peers, vec![NodeId(1), NodeId(2)], "Eval slot to 1 survives");
        t.drop_peer(NodeId(1), None);
        let peers: Vec<NodeId> = t.tick(2.0).into_iter().map(|(p, _)| p).collect();
        assert_eq!(peers, vec![NodeId(2)]);
    }
}
