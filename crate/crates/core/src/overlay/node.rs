//! One node's complete protocol stack, wired into the event simulator.
//!
//! Everything the node does happens in reaction to three kinds of input:
//! the start signal, a received broadcast, and its own timers. Four timers
//! drive the periodic work: the beacon tick (link upkeep, tree
//! maintenance, structural resync, beacon broadcast), the retransmit tick
//! for the reliable transport, the evaluation slot tick that decides whose
//! turn it is to probe a tree swap, and a one-shot decision timer that
//! closes an evaluation window.
//!
//! Structural changes funnel through one place, `structure_sync`: it
//! diffs the neighbor set, drops state for detached peers, recomputes the
//! junction-tree announcements, and lets the inference layer react to new
//! separators. Keeping that path single makes the repair story uniform;
//! losing a parent, gaining a child, and an optimizer swap all look the
//! same below the tree layer.

use std::collections::BTreeSet;

use crate::gauss::Scope;
use crate::netsim::{Input, Outbox, SimNode};
use crate::NodeId;

use super::jt::JtState;
use super::links::LinkTable;
use super::msg::{Body, Channel, WireMsg};
use super::opt::OptState;
use super::transport::Transport;
use super::tree::TreeState;
use super::InferenceLayer;

/// Send everything an inference layer wants transmitted, reliably.
fn drain_into<L: InferenceLayer>(
    layer: &mut L,
    transport: &mut Transport<L::Payload>,
    id: NodeId,
    now: f64,
    out: &mut Outbox<WireMsg<L::Payload>>,
) {
    for (peer, payload) in layer.drain_outgoing() {
        let body = transport.send(
            peer,
            Channel::Inference,
            |version| Body::Inference { payload, version },
            now,
        );
        out.broadcast(WireMsg { from: id, to: Some(peer), body });
    }
}

const TAG_BEACON: u32 = 0;
const TAG_RETRANSMIT: u32 = 1;
const TAG_EVAL_SLOT: u32 = 2;
const TAG_EVAL_DECIDE: u32 = 3;

/// Tunables for the protocol stack. The defaults are what every scenario
/// uses unless it is deliberately stressing one of the knobs.
#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    /// Number of nodes in the deployment, for evaluation slot rotation.
    pub n_nodes: u32,
    /// Seconds between beacons.
    pub beacon_period: f64,
    /// EWMA weight for link rate estimation.
    pub ewma_alpha: f64,
    /// Beacon periods of silence before a peer is declared lost.
    pub k_loss: u32,
    /// Minimum estimated rate before a peer may carry tree edges.
    pub candidate_min_rate: f64,
    /// Minimum beacons heard before a peer may carry tree edges.
    pub candidate_min_heard: u64,
    /// Seconds between retransmissions of unacknowledged payloads.
    pub retransmit_period: f64,
    /// Seconds between tree-swap evaluation slots.
    pub eval_period: f64,
    /// Whether this node takes evaluation slots at all.
    pub optimize: bool,
}

impl ProtocolConfig {
    pub fn new(n_nodes: u32) -> Self {
        ProtocolConfig {
            n_nodes,
            beacon_period: 1.0,
            ewma_alpha: 0.1,
            k_loss: 5,
            candidate_min_rate: 0.2,
            candidate_min_heard: 3,
            retransmit_period: 0.5,
            eval_period: 2.0,
            optimize: true,
        }
    }
}

/// A full protocol participant: link estimator, tree member, junction-tree
/// endpoint, optimizer, transport, and one pluggable inference layer.
pub struct OverlayNode<L: InferenceLayer> {
    id: NodeId,
    cfg: ProtocolConfig,
    links: LinkTable,
    tree: TreeState,
    jt: JtState,
    transport: Transport<L::Payload>,
    opt: OptState,
    layer: L,
    beacon_seq: u64,
    prev_neighbors: BTreeSet<NodeId>,
}

impl<L: InferenceLayer> OverlayNode<L> {
    pub fn new(id: NodeId, local_vars: Scope, layer: L, cfg: ProtocolConfig) -> Self {
        let links = LinkTable::new(
            cfg.ewma_alpha,
            cfg.beacon_period,
            cfg.k_loss,
            cfg.candidate_min_rate,
            cfg.candidate_min_heard,
        );
        let tree = TreeState::new(id, cfg.beacon_period, cfg.k_loss);
        OverlayNode {
            id,
            links,
            tree,
            jt: JtState::new(local_vars),
            transport: Transport::new(cfg.retransmit_period),
            opt: OptState::default(),
            layer,
            beacon_seq: 0,
            prev_neighbors: BTreeSet::new(),
            cfg,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.tree.parent()
    }

    pub fn children(&self) -> &BTreeSet<NodeId> {
        self.tree.children()
    }

    pub fn neighbors(&self) -> BTreeSet<NodeId> {
        self.tree.neighbors()
    }

    pub fn root(&self) -> NodeId {
        self.tree.root()
    }

    pub fn is_tree_root(&self) -> bool {
        self.tree.is_root()
    }

    pub fn epoch(&self) -> u64 {
        self.tree.epoch()
    }

    pub fn local_vars(&self) -> &Scope {
        self.jt.v()
    }

    pub fn clique(&self) -> &Scope {
        self.jt.clique()
    }

    pub fn separators(&self) -> &std::collections::BTreeMap<NodeId, Scope> {
        self.jt.separators()
    }

    /// This node's estimate of how well it hears `peer`.
    pub fn link_rate(&self, peer: NodeId) -> f64 {
        self.links.rate(peer)
    }

    pub fn layer(&self) -> &L {
        &self.layer
    }

    pub fn layer_mut(&mut self) -> &mut L {
        &mut self.layer
    }

    fn beacon_tick(&mut self, now: f64, out: &mut Outbox<WireMsg<L::Payload>>) {
        for peer in self.links.tick(now) {
            self.jt.drop_peer(peer);
            self.transport.drop_peer(peer, None);
        }
        self.beacon_seq += 1;
        self.tree.maintain(&self.links, now, self.beacon_seq);
        self.structure_sync(now, out);
        out.broadcast(WireMsg {
            from: self.id,
            to: None,
            body: Body::Beacon(self.tree.beacon(self.beacon_seq)),
        });
    }

    /// Reconcile every layer below the tree with the current neighbor set,
    /// then propagate whatever that changed: junction-tree announcements
    /// out, separator updates down, inference payloads out.
    fn structure_sync(&mut self, now: f64, out: &mut Outbox<WireMsg<L::Payload>>) {
        let neighbors = self.tree.neighbors();
        for &gone in self.prev_neighbors.difference(&neighbors) {
            self.jt.drop_peer(gone);
            // Keep the eval channel: a detached peer can still owe us an
            // evaluation exchange.
            self.transport.drop_peer(gone, Some(Channel::RVars));
            self.transport.drop_peer(gone, Some(Channel::Inference));
        }
        self.prev_neighbors = neighbors.clone();

        let (announcements, changed) = self.jt.recompute(&neighbors);
        for (peer, scope, reset) in announcements {
            let body = self.transport.send(
                peer,
                Channel::RVars,
                |version| Body::RVars { scope, reset, version },
                now,
            );
            out.broadcast(WireMsg { from: self.id, to: Some(peer), body });
        }
        if changed {
            self.layer.set_separators(self.jt.separators().clone());
            drain_into(&mut self.layer, &mut self.transport, self.id, now, out);
        }
    }

    fn handle_deliver(
        &mut self,
        now: f64,
        from: NodeId,
        msg: WireMsg<L::Payload>,
        out: &mut Outbox<WireMsg<L::Payload>>,
    ) {
        if msg.to.is_some_and(|to| to != self.id) {
            return;
        }
        match msg.body {
            Body::Beacon(beacon) => {
                self.links.on_beacon(from, beacon.seq, now);
                let children_changed = self.tree.on_beacon(from, &beacon, now);
                if children_changed {
                    self.structure_sync(now, out);
                }
            }
            Body::Ack { channel, version } => {
                self.transport.on_ack(from, channel, version);
            }
            Body::RVars { scope, reset, version } => {
                self.ack(from, Channel::RVars, version, out);
                if self.transport.on_reliable(from, Channel::RVars, version) {
                    if reset {
                        // The peer rebuilt this edge from scratch; whatever
                        // we sent before the discard must go out again.
                        self.jt.forget_sent(from);
                        self.layer.invalidate(from);
                    }
                    self.jt.on_announcement(from, scope);
                    self.structure_sync(now, out);
                }
            }
            Body::Inference { payload, version } => {
                self.ack(from, Channel::Inference, version, out);
                if self.transport.on_reliable(from, Channel::Inference, version)
                    && self.prev_neighbors.contains(&from)
                {
                    self.layer.receive(from, payload);
                    drain_into(&mut self.layer, &mut self.transport, self.id, now, out);
                }
            }
            Body::EvalRequest { req, version } => {
                self.ack(from, Channel::Eval, version, out);
                if self.transport.on_reliable(from, Channel::Eval, version) && self.cfg.optimize {
                    let neighbors = self.tree.neighbors();
                    let (relays, reply) =
                        OptState::on_request(&req, from, &neighbors, &self.jt, &self.links);
                    for (peer, relayed) in relays {
                        let body = self.transport.send(
                            peer,
                            Channel::Eval,
                            |version| Body::EvalRequest { req: relayed, version },
                            now,
                        );
                        out.broadcast(WireMsg { from: self.id, to: Some(peer), body });
                    }
                    if let Some(reply) = reply {
                        let body = self.transport.send(
                            req.originator,
                            Channel::Eval,
                            |version| Body::EvalReply { reply, version },
                            now,
                        );
                        out.broadcast(WireMsg { from: self.id, to: Some(req.originator), body });
                    }
                }
            }
            Body::EvalReply { reply, version } => {
                self.ack(from, Channel::Eval, version, out);
                if self.transport.on_reliable(from, Channel::Eval, version) {
                    self.opt.on_reply(self.id, from, &reply, &self.tree, &self.links);
                }
            }
        }
    }

    fn ack(
        &self,
        to: NodeId,
        channel: Channel,
        version: u64,
        out: &mut Outbox<WireMsg<L::Payload>>,
    ) {
        out.broadcast(WireMsg { from: self.id, to: Some(to), body: Body::Ack { channel, version } });
    }

    fn eval_slot(&mut self, now: f64, out: &mut Outbox<WireMsg<L::Payload>>) {
        if !self.cfg.optimize || self.cfg.n_nodes == 0 {
            return;
        }
        let slot = (now / self.cfg.eval_period).round() as u64 % u64::from(self.cfg.n_nodes);
        if slot != u64::from(self.id.0) || self.opt.has_pending() {
            return;
        }
        if let Some((parent, req)) = self.opt.initiate(self.id, &self.tree, &self.jt, &self.links)
        {
            let body = self.transport.send(
                parent,
                Channel::Eval,
                |version| Body::EvalRequest { req, version },
                now,
            );
            out.broadcast(WireMsg { from: self.id, to: Some(parent), body });
            out.set_timer(0.9 * self.cfg.eval_period, TAG_EVAL_DECIDE);
        }
    }

    fn eval_decide(&mut self, now: f64, out: &mut Outbox<WireMsg<L::Payload>>) {
        if let Some(new_parent) = self.opt.decide(self.id, &self.tree, &self.links) {
            self.tree.adopt_parent(new_parent, &self.links);
            self.structure_sync(now, out);
        }
    }
}

impl<L: InferenceLayer> SimNode for OverlayNode<L> {
    type Msg = WireMsg<L::Payload>;

    fn handle(&mut self, now: f64, input: Input<Self::Msg>, out: &mut Outbox<Self::Msg>) {
        match input {
            Input::Start => {
                self.beacon_tick(now, out);
                out.set_timer(self.cfg.beacon_period, TAG_BEACON);
                out.set_timer(self.cfg.retransmit_period, TAG_RETRANSMIT);
                if self.cfg.optimize {
                    out.set_timer(self.cfg.eval_period, TAG_EVAL_SLOT);
                }
            }
            Input::Deliver { from, msg } => self.handle_deliver(now, from, msg, out),
            Input::TimerFired { tag } => match tag {
                TAG_BEACON => {
                    self.beacon_tick(now, out);
                    out.set_timer(self.cfg.beacon_period, TAG_BEACON);
                }
                TAG_RETRANSMIT => {
                    for (peer, body) in self.transport.tick(now) {
                        out.broadcast(WireMsg { from: self.id, to: Some(peer), body });
                    }
                    out.set_timer(self.cfg.retransmit_period, TAG_RETRANSMIT);
                }
                TAG_EVAL_SLOT => {
                    self.eval_slot(now, out);
                    out.set_timer(self.cfg.eval_period, TAG_EVAL_SLOT);
                }
                TAG_EVAL_DECIDE => self.eval_decide(now, out),
                other => unreachable!("unknown timer tag {other}"),
            },
        }
    }
}
