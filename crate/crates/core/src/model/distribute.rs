//! Replicated allocation of clique marginals to network nodes.

use std::collections::{BTreeMap, BTreeSet};

use crate::gauss::Scope;
use crate::{MeasId, NodeId};

use super::{ExternalJunctionTree, ModelError, ProbModel};

/// What one node carries: clique-marginal replicas, its measurements, and
/// the variables it must be able to answer queries about.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeAllocation {
    /// Indices into the external tree's clique list, ascending.
    pub cliques: Vec<usize>,
    pub measurements: Vec<MeasId>,
    pub query: Scope,
    /// Union of local factor variables: clique scopes plus measurement
    /// parents. This is the node's variable set for overlay formation.
    pub local_vars: Scope,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Allocation {
    pub per_node: BTreeMap<NodeId, NodeAllocation>,
}

impl Allocation {
    pub fn node(&self, id: NodeId) -> &NodeAllocation {
        &self.per_node[&id]
    }

    /// Nodes holding a replica of the given clique, ascending.
    pub fn holders(&self, clique: usize) -> Vec<NodeId> {
        self.per_node
            .iter()
            .filter(|(_, a)| a.cliques.contains(&clique))
            .map(|(n, _)| *n)
            .collect()
    }
}

/// Assign clique marginals to nodes.
///
/// Each node receives a connected covering subtree of cliques for its query
/// variables and measurement parents (so local inference is meaningful with
/// zero messages), then every clique is topped up to `redundancy` distinct
/// replicas, round-robin over nodes in ascending id order. Every clique ends
/// up on at least one node.
pub fn distribute(
    tree: &ExternalJunctionTree,
    model: &ProbModel,
    nodes: &[NodeId],
    redundancy: u32,
) -> Result<Allocation, ModelError> {
    if nodes.is_empty() {
        return Err(ModelError::Invalid("no nodes to distribute to".into()));
    }
    if redundancy == 0 {
        return Err(ModelError::Invalid("redundancy must be at least 1".into()));
    }
    let mut nodes: Vec<NodeId> = nodes.to_vec();
    nodes.sort_unstable();
    nodes.dedup();

    let mut owned: BTreeMap<NodeId, Vec<MeasId>> = nodes.iter().map(|n| (*n, Vec::new())).collect();
    for m in model.measurements() {
        owned
            .get_mut(&m.owner)
            .ok_or_else(|| {
                ModelError::Invalid(format!(
                    "measurement {} owned by unknown node {}",
                    m.name, m.owner
                ))
            })?
            .push(m.id);
    }

    let mut adj = vec![Vec::new(); tree.cliques.len()];
    for e in &tree.edges {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }
    for a in &mut adj {
        a.sort_unstable();
    }

    let mut per_node: BTreeMap<NodeId, NodeAllocation> = BTreeMap::new();
    for &node in &nodes {
        let query = model.query_for(node);
        let mut target = query.clone();
        for mid in &owned[&node] {
            target = target.union(&model.measurement(*mid).parents);
        }
        let cliques = covering_subtree(tree, &adj, &target)?;
        let mut local_vars = query.clone();
        for &c in &cliques {
            local_vars = local_vars.union(&tree.cliques[c]);
        }
        for mid in &owned[&node] {
            local_vars = local_vars.union(&model.measurement(*mid).parents);
        }
        per_node.insert(
            node,
            NodeAllocation {
                cliques,
                measurements: owned[&node].clone(),
                query,
                local_vars,
            },
        );
    }

    // Top up replica counts round-robin.
    let want = (redundancy as usize).min(nodes.len());
    let mut cursor = 0usize;
    for c in 0..tree.cliques.len() {
        let mut holders: BTreeSet<NodeId> = per_node
            .iter()
            .filter(|(_, a)| a.cliques.contains(&c))
            .map(|(n, _)| *n)
            .collect();
        while holders.len() < want {
            let node = nodes[cursor % nodes.len()];
            cursor += 1;
            if holders.insert(node) {
                let alloc = per_node.get_mut(&node).unwrap();
                alloc.cliques.push(c);
                alloc.cliques.sort_unstable();
                alloc.local_vars = alloc.local_vars.union(&tree.cliques[c]);
            }
        }
    }

    Ok(Allocation { per_node })
}

/// Smallest-effort connected set of cliques covering `target`: greedy
/// nearest-subtree Steiner growth with deterministic tie-breaks.
fn covering_subtree(
    tree: &ExternalJunctionTree,
    adj: &[Vec<usize>],
    target: &Scope,
) -> Result<Vec<usize>, ModelError> {
    if target.is_empty() {
        return Ok(Vec::new());
    }
    for v in target.iter() {
        if !tree.cliques.iter().any(|c| c.contains(v)) {
            return Err(ModelError::Invalid(format!(
                "variable {v} required by a node is in no clique"
            )));
        }
    }
    let first_var = target.vars()[0];
    let start = tree
        .cliques
        .iter()
        .position(|c| c.contains(first_var))
        .unwrap();
    let mut chosen: BTreeSet<usize> = [start].into();
    let covered = |chosen: &BTreeSet<usize>| -> Scope {
        let mut s = Scope::empty();
        for &c in chosen {
            s = s.union(&tree.cliques[c]);
        }
        s.intersection(target)
    };
    while covered(&chosen) != *target {
        let missing = target.difference(&covered(&chosen));
        // Breadth-first from the chosen set to the nearest clique holding
        // any missing variable; ties resolve to the smallest clique index.
        let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
        let mut frontier: Vec<usize> = chosen.iter().copied().collect();
        let mut seen: BTreeSet<usize> = chosen.clone();
        let mut found = None;
        'bfs: while !frontier.is_empty() {
            let mut next = Vec::new();
            for &c in &frontier {
                if !chosen.contains(&c) && missing.iter().any(|v| tree.cliques[c].contains(v)) {
                    found = Some(c);
                    break 'bfs;
                }
                for &nb in &adj[c] {
                    if seen.insert(nb) {
                        prev.insert(nb, c);
                        next.push(nb);
                    }
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        let Some(mut at) = found else {
            return Err(ModelError::Invalid(
                "covering subtree search failed to reach a required variable".into(),
            ));
        };
        while !chosen.contains(&at) {
            chosen.insert(at);
            match prev.get(&at) {
                Some(&p) => at = p,
                None => break,
            }
        }
    }
    Ok(chosen.into_iter().collect())
}
