//! Offline baselines for the tree-cost objective: what a spanning tree
//! costs, the exact optimum by enumeration, and a simulated-annealing
//! estimate for sizes where enumeration is hopeless.
//!
//! The protocol optimizes the same objective online with only local,
//! estimated link qualities; these baselines get the whole problem on a
//! plate and exist to measure how much that handicap costs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gauss::Scope;
use crate::netsim::LinkModel;
use crate::overlay::{central_junction, gaussian_payload_bytes};
use crate::NodeId;

/// Cost of one spanning tree: the junction tree it induces is built, and
/// each edge is priced as a separator payload in both directions, divided
/// by the link quality of that direction (floored to keep dead links from
/// producing infinities the optimizer could hide behind).
pub fn spanning_tree_cost(
    edges: &[(NodeId, NodeId)],
    vars: &BTreeMap<NodeId, Scope>,
    links: &LinkModel,
) -> f64 {
    let cj = central_junction(edges, vars);
    edges
        .iter()
        .map(|&(a, b)| {
            let mut c = 0.0;
            for (s, r) in [(a, b), (b, a)] {
                let dim = cj.separators.get(&(s, r)).map_or(0, Scope::total_dim);
                c += gaussian_payload_bytes(dim) as f64 / links.quality(s, r).max(1e-3);
            }
            c
        })
        .sum()
}

fn usable(links: &LinkModel, a: NodeId, b: NodeId) -> bool {
    links.quality(a, b) > 0.0 && links.quality(b, a) > 0.0
}

/// Decode a Prüfer sequence over 0..n into the edge list of the tree it
/// names. Every labelled tree on n nodes corresponds to exactly one
/// sequence, which is what lets us enumerate them all.
fn prufer_decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut ptr = 0;
    let mut forced = usize::MAX;
    for &s in seq {
        let leaf = if forced != usize::MAX {
            std::mem::replace(&mut forced, usize::MAX)
        } else {
            while degree[ptr] != 1 {
                ptr += 1;
            }
            ptr += 1;
            ptr - 1
        };
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
        // A node below the scan pointer that just became a leaf must be
        // consumed next, or the scan would miss it.
        if degree[s] == 1 && s < ptr {
            forced = s;
        }
    }
    let mut rest = degree.iter().enumerate().filter(|&(_, &d)| d == 1);
    let a = rest.next().expect("two leaves remain").0;
    let b = rest.next().expect("two leaves remain").0;
    edges.push((a, b));
    edges
}

/// Exact minimum over every spanning tree whose edges are usable in both
/// directions. Enumeration is n^(n-2) trees, so this is capped at 8 nodes.
/// Returns the best cost with one witnessing tree.
pub fn exhaustive_best_cost(
    vars: &BTreeMap<NodeId, Scope>,
    links: &LinkModel,
) -> Option<(f64, Vec<(NodeId, NodeId)>)> {
    let ids: Vec<NodeId> = vars.keys().copied().collect();
    let n = ids.len();
    assert!(
        (2..=8).contains(&n),
        "exhaustive enumeration supports 2..=8 nodes, got {n}"
    );
    let mut best: Option<(f64, Vec<(NodeId, NodeId)>)> = None;
    let mut consider = |edges: Vec<(NodeId, NodeId)>| {
        if !edges.iter().all(|&(a, b)| usable(links, a, b)) {
            return;
        }
        let cost = spanning_tree_cost(&edges, vars, links);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, edges));
        }
    };
    if n == 2 {
        consider(vec![(ids[0], ids[1])]);
        return best;
    }
    let mut seq = vec![0usize; n - 2];
    loop {
        let edges: Vec<(NodeId, NodeId)> = prufer_decode(&seq, n)
            .into_iter()
            .map(|(a, b)| (ids[a], ids[b]))
            .collect();
        consider(edges);
        // odometer increment in base n
        let mut k = 0;
        loop {
            if k == seq.len() {
                return best;
            }
            seq[k] += 1;
            if seq[k] < n {
                break;
            }
            seq[k] = 0;
            k += 1;
        }
    }
}

/// Maximum spanning tree on the weaker direction of each link, the same
/// structure a quality-greedy protocol converges to before any separator
/// information exists. Returns None when the usable links do not connect
/// the nodes.
pub fn greedy_quality_tree(
    vars: &BTreeMap<NodeId, Scope>,
    links: &LinkModel,
) -> Option<Vec<(NodeId, NodeId)>> {
    let ids: Vec<NodeId> = vars.keys().copied().collect();
    let n = ids.len();
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !in_tree[i] {
                continue;
            }
            for j in 0..n {
                if in_tree[j] || !usable(links, ids[i], ids[j]) {
                    continue;
                }
                let w = links.quality(ids[i], ids[j]).min(links.quality(ids[j], ids[i]));
                if pick.is_none_or(|(pw, _, _)| w > pw) {
                    pick = Some((w, i, j));
                }
            }
        }
        let (_, i, j) = pick?;
        in_tree[j] = true;
        edges.push((ids[i], ids[j]));
    }
    Some(edges)
}

/// Simulated annealing over spanning trees: start from the quality-greedy
/// tree, propose swapping a non-tree link for an edge on the cycle it
/// closes, and keep the best tree seen. Returns None when no spanning tree
/// of usable links exists.
pub fn annealed_best_cost(
    vars: &BTreeMap<NodeId, Scope>,
    links: &LinkModel,
    seed: u64,
    iters: usize,
) -> Option<(f64, Vec<(NodeId, NodeId)>)> {
    let ids: Vec<NodeId> = vars.keys().copied().collect();
    let n = ids.len();
    let mut current = greedy_quality_tree(vars, links)?;
    let mut cur_cost = spanning_tree_cost(&current, vars, links);
    let mut best = (cur_cost, current.clone());
    if n <= 2 {
        return Some(best);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let temp0 = (cur_cost * 0.1).max(1e-6);
    for k in 0..iters {
        let temp = temp0 * 0.995f64.powi(k as i32);
        let a = ids[rng.random_range(0..n)];
        let b = ids[rng.random_range(0..n)];
        if a == b || !usable(links, a, b) {
            continue;
        }
        if current.iter().any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b)) {
            continue;
        }
        let path = tree_path(&current, a, b);
        let drop = path[rng.random_range(0..path.len())];
        let mut next = current.clone();
        next.retain(|&e| e != drop);
        next.push((a, b));
        let next_cost = spanning_tree_cost(&next, vars, links);
        let delta = next_cost - cur_cost;
        if delta <= 0.0 || rng.random::<f64>() < (-delta / temp).exp() {
            current = next;
            cur_cost = next_cost;
            if cur_cost < best.0 {
                best = (cur_cost, current.clone());
            }
        }
    }
    Some(best)
}

/// Edges along the unique tree path from a to b.
fn tree_path(edges: &[(NodeId, NodeId)], a: NodeId, b: NodeId) -> Vec<(NodeId, NodeId)> {
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, (NodeId, NodeId))>> = BTreeMap::new();
    for &(x, y) in edges {
        adj.entry(x).or_default().push((y, (x, y)));
        adj.entry(y).or_default().push((x, (x, y)));
    }
    let mut stack = vec![a];
    let mut came: BTreeMap<NodeId, (NodeId, (NodeId, NodeId))> = BTreeMap::new();
    while let Some(u) = stack.pop() {
        if u == b {
            break;
        }
        for &(v, e) in adj.get(&u).into_iter().flatten() {
            if v != a && !came.contains_key(&v) {
                came.insert(v, (u, e));
                stack.push(v);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = b;
    while cur != a {
        let (prev, e) = came[&cur];
        path.push(e);
        cur = prev;
    }
    path
}
