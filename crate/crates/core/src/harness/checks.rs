//! In-simulation structure checks: spanning tree validity, running
//! intersection, and the communication cost of the current tree.
//!
//! These read every live node's protocol state through the simulator and
//! judge it globally, something no real deployment could do; they exist so
//! traces can show when the emergent structure was actually right.

use std::collections::{BTreeMap, BTreeSet};

use crate::gauss::Scope;
use crate::netsim::{LinkModel, Sim};
use crate::overlay::{cliques_satisfy_rip, gaussian_payload_bytes, InferenceLayer, OverlayNode};
use crate::NodeId;

/// Global view of the overlay at one instant.
#[derive(Clone, Debug)]
pub struct StructureSnapshot {
    pub alive: Vec<NodeId>,
    /// Undirected tree edges (a < b) where both endpoints claim the other.
    pub edges: Vec<(NodeId, NodeId)>,
    /// One spanning tree over the live nodes: agreed root, mutual edges,
    /// connected, acyclic.
    pub tree_valid: bool,
    /// Tree is valid and the cliques satisfy running intersection.
    pub rip_valid: bool,
    pub cliques: BTreeMap<NodeId, Scope>,
    /// Separator as seen by the sending endpoint, keyed (sender, receiver).
    pub separators: BTreeMap<(NodeId, NodeId), Scope>,
}

impl StructureSnapshot {
    /// Expected bytes for one round of separator messages over every tree
    /// edge, both directions, priced with the given link qualities (the
    /// caller decides whether those are true or estimated). NaN when there
    /// is no valid tree to price.
    pub fn tree_cost(&self, links: &LinkModel) -> f64 {
        if !self.tree_valid {
            return f64::NAN;
        }
        let mut total = 0.0;
        for &(a, b) in &self.edges {
            for (s, r) in [(a, b), (b, a)] {
                let dim = self.separators.get(&(s, r)).map_or(0, Scope::total_dim);
                total += gaussian_payload_bytes(dim) as f64 / links.quality(s, r).max(1e-3);
            }
        }
        total
    }
}

/// Capture the live nodes' tree and junction-tree state.
pub fn snapshot<L: InferenceLayer>(sim: &Sim<OverlayNode<L>>) -> StructureSnapshot {
    let alive: Vec<NodeId> = (0..sim.n_nodes() as u32)
        .map(NodeId)
        .filter(|&i| sim.is_alive(i))
        .collect();
    let is_alive = |i: NodeId| alive.binary_search(&i).is_ok();

    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut mutual = true;
    for &i in &alive {
        let node = sim.node(i);
        if let Some(p) = node.parent() {
            if is_alive(p) && sim.node(p).children().contains(&i) {
                edges.insert((i.min(p), i.max(p)));
            } else {
                mutual = false;
            }
        }
        for &c in node.children() {
            if !is_alive(c) || sim.node(c).parent() != Some(i) {
                mutual = false;
            }
        }
    }

    let roots: BTreeSet<NodeId> = alive.iter().map(|&i| sim.node(i).root()).collect();
    let rootless = alive
        .iter()
        .filter(|&&i| sim.node(i).parent().is_none())
        .count();

    // Connectivity over the mutual edges.
    let connected = {
        let index: BTreeMap<NodeId, usize> =
            alive.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut parent: Vec<usize> = (0..alive.len()).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut parts = alive.len();
        for &(a, b) in &edges {
            let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
            if ra != rb {
                parent[ra] = rb;
                parts -= 1;
            }
        }
        parts <= 1
    };

    let tree_valid = !alive.is_empty()
        && mutual
        && roots.len() == 1
        && rootless == 1
        && edges.len() + 1 == alive.len()
        && connected;

    let mut cliques = BTreeMap::new();
    let mut separators = BTreeMap::new();
    for &i in &alive {
        let node = sim.node(i);
        cliques.insert(i, node.clique().clone());
        for (&j, s) in node.separators() {
            separators.insert((i, j), s.clone());
        }
    }
    let edges: Vec<(NodeId, NodeId)> = edges.into_iter().collect();
    let rip_valid = tree_valid && cliques_satisfy_rip(&edges, &cliques);

    StructureSnapshot {
        alive,
        edges,
        tree_valid,
        rip_valid,
        cliques,
        separators,
    }
}
