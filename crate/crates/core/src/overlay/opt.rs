//! Greedy distributed tree optimization by single parent-edge swaps.
//!
//! A node that owns a parent edge periodically asks the rest of the tree
//! what replacing that edge would cost. The request enters the tree at the
//! current parent and floods away from the originator, so everyone who
//! receives it is, by construction, outside the originator's subtree and
//! therefore a legal new parent. The flood carries two variable sets: the
//! one the originator's subtree injects over the edge under evaluation
//! (`moving_vars`), and the recomputed reachable set along the flood path
//! (`r_away`), i.e. what the announcements would become with the
//! originator's branch unplugged. With those, both endpoints of every
//! crossed edge can price how their separator would change, and each adds
//! the half of the cost it can see: every directed term uses the receiving
//! end's estimated rate, because that is the endpoint that measures it.
//!
//! Nodes that can actually hear the originator reply directly, off-tree,
//! with the accumulated delta plus their half of the proposed new edge;
//! the originator adds its own half and keeps the best offer. At the end
//! of the collection window it re-verifies that its tree view is unchanged
//! and the candidate still looks legal and audible, and only then
//! reparents. The spanning-tree layer does the rest: the next beacon's
//! parent claim moves the edge, and the junction-tree layer re-floods
//! announcements.

use std::collections::BTreeSet;

use crate::gauss::Scope;
use crate::NodeId;

use super::jt::{gaussian_payload_bytes, JtState};
use super::links::LinkTable;
use super::msg::{EvalReply, EvalRequest};
use super::tree::TreeState;

/// Rate floor shared with the cost model: a silent direction prices as a
/// thousand expected transmissions, not infinity.
pub(super) const RATE_FLOOR: f64 = 1e-3;

fn payload(dim: usize) -> f64 {
    gaussian_payload_bytes(dim) as f64
}

#[derive(Clone, Debug)]
struct PendingEval {
    eval_id: u64,
    epoch: u64,
    parent_at_start: NodeId,
    /// Best offer so far: (total delta, candidate).
    best: Option<(f64, NodeId)>,
}

#[derive(Clone, Debug, Default)]
pub(super) struct OptState {
    eval_counter: u64,
    pending: Option<PendingEval>,
}

impl OptState {
    /// Start evaluating my parent edge. Returns the request to send to the
    /// parent, or None when there is nothing to evaluate yet.
    pub fn initiate(
        &mut self,
        me: NodeId,
        tree: &TreeState,
        jt: &JtState,
        links: &LinkTable,
    ) -> Option<(NodeId, EvalRequest)> {
        let parent = tree.parent()?;
        let moving_vars = jt.sent_scope(parent)?.clone();
        let sep = jt.sep(parent)?;
        // My half of deleting the current edge.
        let delta = -payload(sep.total_dim()) / links.rate(parent).max(RATE_FLOOR);
        let eval_id = (u64::from(me.0) << 32) | self.eval_counter;
        self.eval_counter += 1;
        self.pending = Some(PendingEval {
            eval_id,
            epoch: tree.epoch(),
            parent_at_start: parent,
            best: None,
        });
        Some((
            parent,
            EvalRequest {
                originator: me,
                eval_id,
                epoch: tree.epoch(),
                moving_vars,
                r_away: Scope::empty(),
                delta,
            },
        ))
    }

    /// Relay-side processing of a request that arrived from `from`.
    /// Returns the requests to forward deeper into the tree and, when this
    /// node can hear the originator, its own offer.
    pub fn on_request(
        req: &EvalRequest,
        from: NodeId,
        neighbors: &BTreeSet<NodeId>,
        jt: &JtState,
        links: &LinkTable,
    ) -> (Vec<(NodeId, EvalRequest)>, Option<EvalReply>) {
        let at_parent = from == req.originator;
        // My half of the edge the request crossed to reach me: for the
        // first hop that is the edge being deleted; deeper it is the
        // repriced flood-path edge.
        let arrival_half = if at_parent {
            match jt.sep(from) {
                Some(sep) => -payload(sep.total_dim()) / links.rate(from).max(RATE_FLOOR),
                None => return (Vec::new(), None),
            }
        } else {
            let (Some(sent), Some(old_sep)) = (jt.sent_scope(from), jt.sep(from)) else {
                return (Vec::new(), None);
            };
            let new_sep = req.r_away.intersection(&sent.union(&req.moving_vars));
            (payload(new_sep.total_dim()) - payload(old_sep.total_dim()))
                / links.rate(from).max(RATE_FLOOR)
        };
        let base = req.delta + arrival_half;

        let mut relays = Vec::new();
        for &c in neighbors {
            if c == from || c == req.originator {
                continue;
            }
            // What my announcement toward c becomes with the originator's
            // branch unplugged and the flood-path branch adjusted.
            let mut r = jt.v().union(&req.r_away);
            for &k in neighbors {
                if k != c && k != from {
                    if let Some(s) = jt.inbox_scope(k) {
                        r = r.union(s);
                    }
                }
            }
            let (Some(inb), Some(old_sep)) = (jt.inbox_scope(c), jt.sep(c)) else {
                continue;
            };
            let new_sep = r.intersection(&inb.union(&req.moving_vars));
            let send_half = (payload(new_sep.total_dim()) - payload(old_sep.total_dim()))
                / links.rate(c).max(RATE_FLOOR);
            relays.push((
                c,
                EvalRequest { r_away: r, delta: base + send_half, ..req.clone() },
            ));
        }

        // My own offer, if the originator is audible and I am not its
        // current parent (re-adding the same edge is not a swap).
        let reply = if !at_parent && links.is_candidate(req.originator) {
            let mut r_to_o = jt.v().union(&req.r_away);
            for &k in neighbors {
                if k != from {
                    if let Some(s) = jt.inbox_scope(k) {
                        r_to_o = r_to_o.union(s);
                    }
                }
            }
            let new_sep = r_to_o.intersection(&req.moving_vars);
            let dim = new_sep.total_dim();
            let half = payload(dim) / links.rate(req.originator).max(RATE_FLOOR);
            Some(EvalReply {
                eval_id: req.eval_id,
                epoch: req.epoch,
                delta: base + half,
                new_sep_dim: dim,
            })
        } else {
            None
        };
        (relays, reply)
    }

    /// Originator side: fold in one offer.
    pub fn on_reply(
        &mut self,
        me: NodeId,
        from: NodeId,
        reply: &EvalReply,
        tree: &TreeState,
        links: &LinkTable,
    ) {
        let Some(pending) = &mut self.pending else { return };
        if reply.eval_id != pending.eval_id || reply.epoch != pending.epoch {
            return;
        }
        if tree.epoch() != pending.epoch {
            self.pending = None;
            return;
        }
        if !links.is_candidate(from) {
            return;
        }
        match tree.advert(from) {
            Some(ad) if !ad.path.contains(&me) => {}
            _ => return,
        }
        let total = reply.delta + payload(reply.new_sep_dim) / links.rate(from).max(RATE_FLOOR);
        let better = match pending.best {
            None => true,
            Some((best, who)) => total < best || (total == best && from < who),
        };
        if better {
            pending.best = Some((total, from));
        }
    }

    /// Collection window over: the new parent to adopt, if any offer both
    /// improves the cost and still checks out against the current tree.
    pub fn decide(&mut self, me: NodeId, tree: &TreeState, links: &LinkTable) -> Option<NodeId> {
        let pending = self.pending.take()?;
        if tree.epoch() != pending.epoch || tree.parent() != Some(pending.parent_at_start) {
            return None;
        }
        let (delta, candidate) = pending.best?;
        if delta >= 0.0 {
            return None;
        }
        let ad = tree.advert(candidate)?;
        if ad.path.contains(&me) || !links.is_candidate(candidate) {
            return None;
        }
        Some(candidate)
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }
}
