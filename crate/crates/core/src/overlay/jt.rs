//! Network junction-tree formation over a spanning tree.
//!
//! Every node announces to each tree neighbor the set of variables
//! reachable through it: its own variables plus everything announced by its
//! other neighbors. From the announcements it receives, a node derives its
//! clique (its own variables plus every variable that two different
//! branches both reach, which is exactly what it must carry for the running
//! intersection property) and the separator toward each neighbor.
//!
//! The same fixed-point formulas are implemented twice: incrementally and
//! message-driven in [`JtState`] for the live protocol, and by direct
//! recursion in [`central_junction`], which serves as the oracle the
//! distributed version is checked against.

use std::collections::{BTreeMap, BTreeSet};

use crate::gauss::Scope;
use crate::NodeId;

/// Per-node junction-tree state: local variables, announcements received,
/// announcements last sent, and the derived clique and separators.
#[derive(Clone, Debug)]
pub(super) struct JtState {
    v: Scope,
    /// Latest reachable-set announcement per peer. Entries are kept even
    /// for peers that are not currently tree neighbors (their announcement
    /// may arrive moments before the beacon that makes them a child), but
    /// only current neighbors enter the formulas.
    inbox: BTreeMap<NodeId, Scope>,
    /// What was last sent per neighbor, to send only on change.
    sent: BTreeMap<NodeId, Scope>,
    /// Peers whose state this node discarded locally. The next
    /// announcement to such a peer carries a reset mark so the peer knows
    /// to resend its own state: without it, a one-sided discard (a peer
    /// briefly marked lost, then revived) would leave this node waiting
    /// forever for an announcement the peer believes was already
    /// delivered.
    fresh_start: BTreeSet<NodeId>,
    clique: Scope,
    seps: BTreeMap<NodeId, Scope>,
}

impl JtState {
    pub fn new(v: Scope) -> Self {
        JtState {
            clique: v.clone(),
            v,
            inbox: BTreeMap::new(),
            sent: BTreeMap::new(),
            fresh_start: BTreeSet::new(),
            seps: BTreeMap::new(),
        }
    }

    pub fn v(&self) -> &Scope {
        &self.v
    }

    pub fn clique(&self) -> &Scope {
        &self.clique
    }

    pub fn separators(&self) -> &BTreeMap<NodeId, Scope> {
        &self.seps
    }

    pub fn sep(&self, peer: NodeId) -> Option<&Scope> {
        self.seps.get(&peer)
    }

    pub fn inbox_scope(&self, peer: NodeId) -> Option<&Scope> {
        self.inbox.get(&peer)
    }

    pub fn sent_scope(&self, peer: NodeId) -> Option<&Scope> {
        self.sent.get(&peer)
    }

    pub fn on_announcement(&mut self, from: NodeId, scope: Scope) {
        self.inbox.insert(from, scope);
    }

    /// Forget a peer entirely (lost, or detached from the tree). Should
    /// the peer come back, the first announcement to it is reset-marked.
    pub fn drop_peer(&mut self, peer: NodeId) {
        self.inbox.remove(&peer);
        self.sent.remove(&peer);
        self.fresh_start.insert(peer);
    }

    /// A peer told us it rebuilt its state for this edge from scratch:
    /// forget what was last sent so the next recompute resends it. This
    /// deliberately does not mark a fresh start of our own, or two nodes
    /// would reset each other forever.
    pub fn forget_sent(&mut self, peer: NodeId) {
        self.sent.remove(&peer);
    }

    /// Re-derive announcements, clique, and separators for the given
    /// neighbor set. Returns the announcements that must go out (changed
    /// or never sent, with their reset mark) and whether the clique or any
    /// separator changed.
    pub fn recompute(
        &mut self,
        neighbors: &BTreeSet<NodeId>,
    ) -> (Vec<(NodeId, Scope, bool)>, bool) {
        self.sent.retain(|k, _| neighbors.contains(k));

        let mut to_send = Vec::new();
        for &j in neighbors {
            let mut r = self.v.clone();
            for &k in neighbors {
                if k != j {
                    if let Some(s) = self.inbox.get(&k) {
                        r = r.union(s);
                    }
                }
            }
            if self.sent.get(&j) != Some(&r) {
                self.sent.insert(j, r.clone());
                to_send.push((j, r, self.fresh_start.remove(&j)));
            }
        }

        let mut clique = self.v.clone();
        let heard: Vec<(NodeId, &Scope)> = neighbors
            .iter()
            .filter_map(|&k| self.inbox.get(&k).map(|s| (k, s)))
            .collect();
        for (a, (_, ra)) in heard.iter().enumerate() {
            for (_, rb) in &heard[a + 1..] {
                clique = clique.union(&ra.intersection(rb));
            }
        }
        let mut seps = BTreeMap::new();
        for &j in neighbors {
            let r_in = self.inbox.get(&j).cloned().unwrap_or_else(Scope::empty);
            seps.insert(j, clique.intersection(&r_in));
        }

        let changed = clique != self.clique || seps != self.seps;
        self.clique = clique;
        self.seps = seps;
        (to_send, changed)
    }
}

/// The same fixed point, computed centrally by recursion over a known
/// tree. This is the oracle for the distributed protocol and the input to
/// global validity checks.
#[derive(Clone, Debug, PartialEq)]
pub struct CentralJunction {
    /// Reachable set over each directed tree edge.
    pub reachable: BTreeMap<(NodeId, NodeId), Scope>,
    pub cliques: BTreeMap<NodeId, Scope>,
    /// Separator per directed edge (symmetric at the fixed point).
    pub separators: BTreeMap<(NodeId, NodeId), Scope>,
}

/// Compute reachable sets, cliques, and separators for a tree given every
/// node's variable set. `edges` must form a forest over the keys of `vars`.
pub fn central_junction(
    edges: &[(NodeId, NodeId)],
    vars: &BTreeMap<NodeId, Scope>,
) -> CentralJunction {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for &n in vars.keys() {
        adj.entry(n).or_default();
    }
    for &(a, b) in edges {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    }

    fn reach(
        i: NodeId,
        j: NodeId,
        adj: &BTreeMap<NodeId, BTreeSet<NodeId>>,
        vars: &BTreeMap<NodeId, Scope>,
        memo: &mut BTreeMap<(NodeId, NodeId), Scope>,
    ) -> Scope {
        if let Some(s) = memo.get(&(i, j)) {
            return s.clone();
        }
        let mut r = vars[&i].clone();
        for &k in &adj[&i] {
            if k != j {
                r = r.union(&reach(k, i, adj, vars, memo));
            }
        }
        memo.insert((i, j), r.clone());
        r
    }

    let mut reachable = BTreeMap::new();
    for (&i, nbrs) in &adj {
        for &j in nbrs {
            let r = reach(i, j, &adj, vars, &mut reachable);
            reachable.insert((i, j), r);
        }
    }

    let mut cliques = BTreeMap::new();
    let mut separators = BTreeMap::new();
    for (&i, nbrs) in &adj {
        let mut c = vars[&i].clone();
        let inco: Vec<&Scope> = nbrs.iter().map(|&k| &reachable[&(k, i)]).collect();
        for (a, ra) in inco.iter().enumerate() {
            for rb in &inco[a + 1..] {
                c = c.union(&ra.intersection(rb));
            }
        }
        cliques.insert(i, c);
    }
    for (&i, nbrs) in &adj {
        for &j in nbrs {
            separators.insert((i, j), cliques[&i].intersection(&reachable[&(j, i)]));
        }
    }
    CentralJunction { reachable, cliques, separators }
}

/// Does every variable's set of carrying cliques form a connected subtree?
pub fn cliques_satisfy_rip(
    edges: &[(NodeId, NodeId)],
    cliques: &BTreeMap<NodeId, Scope>,
) -> bool {
    let mut all_vars = Scope::empty();
    for c in cliques.values() {
        all_vars = all_vars.union(c);
    }
    for v in all_vars.iter() {
        let members: BTreeSet<NodeId> = cliques
            .iter()
            .filter(|(_, c)| c.contains(v))
            .map(|(&n, _)| n)
            .collect();
        let Some(&start) = members.first() else { continue };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(a, b) in edges {
                let next = if a == u { b } else if b == u { a } else { continue };
                if members.contains(&next) && seen.insert(next) {
                    stack.push(next);
                }
            }
        }
        if seen != members {
            return false;
        }
    }
    true
}

/// Bytes of a separator message carrying a Gaussian over `d` scalar
/// dimensions: an information vector, the upper triangle of a precision
/// matrix, and a 16-byte header.
pub fn gaussian_payload_bytes(d: usize) -> usize {
    16 + 8 * (d + d * (d + 1) / 2)
}

/// Expected bytes to get one round of separator messages across every tree
/// edge, both directions: each directed edge costs its payload divided by
/// the delivery probability in that direction (floored at 1e-3, so a dead
/// link prices as a thousand transmissions per message, not infinity).
///
/// The caller supplies one entry per undirected edge: the separator's total
/// scalar dimension and the two directed delivery probabilities.
pub fn tree_cost(edges: impl IntoIterator<Item = (usize, f64, f64)>) -> f64 {
    edges
        .into_iter()
        .map(|(dim, q_ab, q_ba)| {
            let b = gaussian_payload_bytes(dim) as f64;
            b / q_ab.max(1e-3) + b / q_ba.max(1e-3)
        })
        .sum()
}
