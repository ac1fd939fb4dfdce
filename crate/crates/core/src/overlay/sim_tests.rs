//! End-to-end protocol tests: full nodes in the event simulator.

use std::collections::{BTreeMap, BTreeSet};

use crate::gauss::{Scope, VarId};
use crate::netsim::{
    FailureSchedule, InterferenceWindow, LinkModel, Sim, SimConfig, WireSize,
};
use crate::NodeId;

use super::jt::{central_junction, cliques_satisfy_rip};
use super::node::{OverlayNode, ProtocolConfig};
use super::InferenceLayer;

/// A payload for running the structural stack with no inference on top.
#[derive(Clone, Debug)]
struct Nil;

impl WireSize for Nil {
    fn wire_bytes(&self) -> usize {
        0
    }
}

struct NullLayer;

impl InferenceLayer for NullLayer {
    type Payload = Nil;

    fn set_separators(&mut self, _seps: BTreeMap<NodeId, Scope>) {}

    fn receive(&mut self, _from: NodeId, _payload: Nil) {}

    fn invalidate(&mut self, _peer: NodeId) {}

    fn drain_outgoing(&mut self) -> Vec<(NodeId, Nil)> {
        Vec::new()
    }
}

fn n(i: u32) -> NodeId {
    NodeId(i)
}

fn scope(ids: &[u32]) -> Scope {
    Scope::new(ids.iter().map(|&i| VarId::scalar(i)).collect())
}

fn build(
    vars: &[Scope],
    links: LinkModel,
    failures: &FailureSchedule,
    seed: u64,
    optimize: bool,
) -> Sim<OverlayNode<NullLayer>> {
    let nodes: Vec<OverlayNode<NullLayer>> = vars
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut cfg = ProtocolConfig::new(vars.len() as u32);
            cfg.optimize = optimize;
            OverlayNode::new(n(i as u32), v.clone(), NullLayer, cfg)
        })
        .collect();
    Sim::new(nodes, links, failures, SimConfig { latency: 0.05, seed })
}

/// Parent pointers of the live nodes, as an undirected edge set.
fn tree_edges(sim: &Sim<OverlayNode<NullLayer>>, alive: &[u32]) -> BTreeSet<(NodeId, NodeId)> {
    let mut edges = BTreeSet::new();
    for &i in alive {
        if let Some(p) = sim.node(n(i)).parent() {
            let (a, b) = if p < n(i) { (p, n(i)) } else { (n(i), p) };
            edges.insert((a, b));
        }
    }
    edges
}

fn assert_spanning_tree(sim: &Sim<OverlayNode<NullLayer>>, alive: &[u32]) {
    let root = sim.node(n(alive[0])).root();
    for &i in alive {
        let node = sim.node(n(i));
        assert_eq!(node.root(), root, "node {i} disagrees about the root");
        assert_eq!(
            node.parent().is_none(),
            n(i) == root,
            "exactly the root lacks a parent (node {i})"
        );
        // Parent/child views must be mutual.
        if let Some(p) = node.parent() {
            assert!(
                sim.node(p).children().contains(&n(i)),
                "node {} does not list {} as child",
                p.0,
                i
            );
        }
        for &c in node.children() {
            assert_eq!(
                sim.node(c).parent(),
                Some(n(i)),
                "child {} does not claim parent {}",
                c.0,
                i
            );
        }
    }
    let edges = tree_edges(sim, alive);
    assert_eq!(edges.len(), alive.len() - 1, "spanning tree edge count");
    // Connectivity by union-find over the edge set.
    let mut rep: BTreeMap<NodeId, NodeId> = alive.iter().map(|&i| (n(i), n(i))).collect();
    fn find(rep: &mut BTreeMap<NodeId, NodeId>, x: NodeId) -> NodeId {
        let p = rep[&x];
        if p == x {
            return x;
        }
        let r = find(rep, p);
        rep.insert(x, r);
        r
    }
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut rep, a), find(&mut rep, b));
        rep.insert(ra, rb);
    }
    let roots: BTreeSet<NodeId> = alive.iter().map(|&i| find(&mut rep, n(i))).collect();
    assert_eq!(roots.len(), 1, "tree must be connected");
}

#[test]
fn two_nodes_agree_on_one_edge() {
    let vars = [scope(&[0, 1]), scope(&[1, 2])];
    let mut sim = build(&vars, LinkModel::full(2, 1.0), &FailureSchedule::none(), 3, false);
    sim.run_until(12.0);

    assert_spanning_tree(&sim, &[0, 1]);
    assert_eq!(sim.node(n(1)).parent(), Some(n(0)), "smaller id becomes root");
    assert_eq!(sim.node(n(0)).root(), n(0));
    // Announcements have flowed both ways: the shared variable is the
    // separator on each side.
    assert_eq!(sim.node(n(0)).separators()[&n(1)], scope(&[1]));
    assert_eq!(sim.node(n(1)).separators()[&n(0)], scope(&[1]));
    assert_eq!(*sim.node(n(0)).clique(), scope(&[0, 1]));
}

#[test]
fn ten_nodes_form_a_spanning_tree() {
    let vars: Vec<Scope> = (0..10).map(|i| scope(&[i, i + 100])).collect();
    let mut sim = build(&vars, LinkModel::full(10, 1.0), &FailureSchedule::none(), 7, false);
    sim.run_until(20.0);
    assert_spanning_tree(&sim, &(0..10).collect::<Vec<_>>());
    assert_eq!(sim.node(n(4)).root(), n(0), "minimum id wins the election");
}

#[test]
fn in_sim_junction_tree_matches_central_fixed_point() {
    // A mixed sharing pattern over seven nodes on lossless links.
    let vars: Vec<Scope> = vec![
        scope(&[0, 1]),
        scope(&[1, 2, 3]),
        scope(&[3]),
        scope(&[2, 4]),
        scope(&[4, 5]),
        scope(&[1, 5]),
        scope(&[6, 0]),
    ];
    let mut sim = build(&vars, LinkModel::full(7, 1.0), &FailureSchedule::none(), 11, false);
    sim.run_until(25.0);

    let ids: Vec<u32> = (0..7).collect();
    assert_spanning_tree(&sim, &ids);
    let edges: Vec<(NodeId, NodeId)> = tree_edges(&sim, &ids).into_iter().collect();
    let var_map: BTreeMap<NodeId, Scope> = ids.iter().map(|&i| (n(i), vars[i as usize].clone())).collect();
    let central = central_junction(&edges, &var_map);

    for &i in &ids {
        let node = sim.node(n(i));
        assert_eq!(
            node.clique(),
            &central.cliques[&n(i)],
            "clique of node {i} disagrees with the oracle"
        );
        for (&j, sep) in node.separators() {
            assert_eq!(
                sep,
                &central.separators[&(n(i), j)],
                "separator {i}->{} disagrees with the oracle",
                j.0
            );
        }
    }
    let cliques: BTreeMap<NodeId, Scope> =
        ids.iter().map(|&i| (n(i), sim.node(n(i)).clique().clone())).collect();
    assert!(cliques_satisfy_rip(&edges, &cliques), "running intersection holds");
}

#[test]
fn root_death_triggers_reelection() {
    let vars: Vec<Scope> = (0..5).map(|i| scope(&[i])).collect();
    let failures = FailureSchedule::at([(n(0), 10.0)]);
    let mut sim = build(&vars, LinkModel::full(5, 1.0), &failures, 13, false);

    sim.run_until(8.0);
    assert_eq!(sim.node(n(3)).root(), n(0), "initial root is the minimum id");

    sim.run_until(40.0);
    assert!(!sim.is_alive(n(0)));
    let survivors: Vec<u32> = (1..5).collect();
    assert_spanning_tree(&sim, &survivors);
    assert_eq!(sim.node(n(2)).root(), n(1), "survivors elect the next minimum id");
}

#[test]
fn optimizer_discovers_the_cheaper_attachment() {
    // Radio line 0-1-2-3 plus a weaker direct channel between 0 and 3. The
    // ends share two variables, so hanging 3 under 2 forces those
    // variables through both middle separators; attaching 3 directly to 0
    // relieves them. Nodes 1 and 2 share their own variable, which keeps
    // every other reattachment strictly unprofitable. The optimizer should
    // find exactly the one good swap on its own.
    let vars = [
        scope(&[0, 1, 10]),
        scope(&[11, 20]),
        scope(&[12, 20]),
        scope(&[0, 1, 13]),
    ];
    let mut links = LinkModel::new();
    links.set_sym(n(0), n(1), 1.0);
    links.set_sym(n(1), n(2), 1.0);
    links.set_sym(n(2), n(3), 1.0);
    links.set_sym(n(0), n(3), 0.8);
    let mut sim = build(&vars, links, &FailureSchedule::none(), 17, true);

    sim.run_until(10.0);
    assert_spanning_tree(&sim, &[0, 1, 2, 3]);
    let before = sim.node(n(3)).parent();

    sim.run_until(120.0);
    assert_spanning_tree(&sim, &[0, 1, 2, 3]);
    assert_eq!(
        sim.node(n(3)).parent(),
        Some(n(0)),
        "node 3 should re-attach to node 0 (was {before:?})"
    );
    // Variables 0 and 1 no longer ride the relay chain: the middle edge
    // carries only the variable its own endpoints share.
    assert_eq!(sim.node(n(1)).separators()[&n(2)], scope(&[20]));
    assert_eq!(sim.node(n(0)).separators()[&n(3)], scope(&[0, 1]));
}

#[test]
fn partition_splits_the_tree_and_healing_rejoins_it() {
    let vars: Vec<Scope> = (0..4).map(|i| scope(&[i])).collect();
    let mut links = LinkModel::full(4, 1.0);
    links.add_window(InterferenceWindow {
        start: 20.0,
        end: 45.0,
        a: [n(0), n(1)].into(),
        b: [n(2), n(3)].into(),
    });
    let mut sim = build(&vars, links, &FailureSchedule::none(), 23, false);

    sim.run_until(18.0);
    assert_spanning_tree(&sim, &[0, 1, 2, 3]);

    // Mid-partition: each side has its own root.
    sim.run_until(40.0);
    assert_eq!(sim.node(n(0)).root(), n(0));
    assert_eq!(sim.node(n(1)).root(), n(0));
    assert_eq!(sim.node(n(2)).root(), n(2), "cut side elects its own minimum");
    assert_eq!(sim.node(n(3)).root(), n(2));

    // Healed: one tree again, within a failure-repair budget.
    sim.run_until(75.0);
    assert_spanning_tree(&sim, &[0, 1, 2, 3]);
    assert_eq!(sim.node(n(3)).root(), n(0));
}
