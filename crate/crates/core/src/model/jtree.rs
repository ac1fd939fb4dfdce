//! External junction tree construction and calibration.

use std::collections::{BTreeMap, BTreeSet};

use crate::gauss::{GaussianFactor, Scope, VarId};
use crate::util::Dsu;

use super::{ModelError, ProbModel};

#[derive(Clone, Debug, PartialEq)]
pub struct JtEdge {
    pub a: usize,
    pub b: usize,
    pub separator: Scope,
}

/// A junction tree over the model's environment variables.
///
/// Cliques are kept in a canonical (lexicographic) order so construction is
/// deterministic and ties have a well-defined resolution. After
/// [`reparameterize`] the tree also carries the exact marginal of the prior
/// over each clique.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalJunctionTree {
    pub cliques: Vec<Scope>,
    pub edges: Vec<JtEdge>,
    marginals: Option<Vec<GaussianFactor>>,
}

#[derive(Clone, Debug)]
pub enum EliminationOrder {
    /// Greedy minimum-fill heuristic, ties broken by variable id.
    MinFill,
    /// Eliminate in exactly this order; must cover every environment variable.
    Explicit(Vec<VarId>),
}

impl ExternalJunctionTree {
    pub fn marginals(&self) -> Option<&[GaussianFactor]> {
        self.marginals.as_deref()
    }

    pub fn marginal(&self, clique: usize) -> Option<&GaussianFactor> {
        self.marginals.as_ref().map(|m| &m[clique])
    }

    /// Largest clique size in variables.
    pub fn max_clique_vars(&self) -> usize {
        self.cliques.iter().map(|c| c.len()).max().unwrap_or(0)
    }

    /// Index of the first clique containing `scope`, in canonical order.
    pub fn covering_clique(&self, scope: &Scope) -> Option<usize> {
        self.cliques.iter().position(|c| scope.is_subset_of(c))
    }

    pub fn neighbors(&self, clique: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &self.edges {
            if e.a == clique {
                out.push(e.b);
            } else if e.b == clique {
                out.push(e.a);
            }
        }
        out.sort_unstable();
        out
    }

    /// Running intersection property: for every variable, the cliques that
    /// contain it form a connected subtree.
    pub fn verify_rip(&self) -> bool {
        let mut adj = vec![Vec::new(); self.cliques.len()];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut vars = BTreeSet::new();
        for c in &self.cliques {
            vars.extend(c.iter());
        }
        for v in vars {
            let holders: Vec<usize> = (0..self.cliques.len())
                .filter(|&i| self.cliques[i].contains(v))
                .collect();
            if holders.is_empty() {
                continue;
            }
            let holder_set: BTreeSet<usize> = holders.iter().copied().collect();
            let mut seen = BTreeSet::new();
            let mut stack = vec![holders[0]];
            seen.insert(holders[0]);
            while let Some(c) = stack.pop() {
                for &n in &adj[c] {
                    if holder_set.contains(&n) && seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            if seen.len() != holders.len() {
                return false;
            }
        }
        true
    }
}

/// Compile the model's prior into a junction tree.
///
/// The moral graph connects the variables of every prior factor and of every
/// measurement's parent set (so each parent set ends up inside some clique).
/// Triangulation is by variable elimination along the requested order, the
/// tree by a maximum-weight spanning tree over clique intersections with
/// lexicographic tie-breaks.
pub fn build_external_jtree(
    model: &ProbModel,
    order: EliminationOrder,
) -> Result<ExternalJunctionTree, ModelError> {
    let env = model.env_scope();
    if env.is_empty() {
        return Err(ModelError::Invalid("model has no variables".into()));
    }

    let mut adj: BTreeMap<VarId, BTreeSet<VarId>> = BTreeMap::new();
    for d in model.vars() {
        adj.insert(d.var, BTreeSet::new());
    }
    let connect_all = |scope: &Scope, adj: &mut BTreeMap<VarId, BTreeSet<VarId>>| {
        for a in scope.iter() {
            for b in scope.iter() {
                if a != b {
                    adj.get_mut(&a).unwrap().insert(b);
                }
            }
        }
    };
    for p in model.priors() {
        if !p.scope().is_subset_of(&env) {
            return Err(ModelError::Invalid(
                "prior factor over undeclared variables".into(),
            ));
        }
        connect_all(p.scope(), &mut adj);
    }
    for m in model.measurements() {
        if !m.parents.is_subset_of(&env) {
            return Err(ModelError::Invalid(format!(
                "measurement {} has undeclared parents",
                m.name
            )));
        }
        connect_all(&m.parents, &mut adj);
    }

    let order = match order {
        EliminationOrder::Explicit(o) => {
            let as_scope: Scope = o.iter().copied().collect();
            if as_scope != env {
                return Err(ModelError::Invalid(
                    "elimination order must cover every variable exactly once".into(),
                ));
            }
            o
        }
        EliminationOrder::MinFill => min_fill_order(&adj),
    };

    let mut cliques: Vec<Scope> = Vec::new();
    let mut live = adj;
    for v in order {
        let neighbors = live.remove(&v).unwrap_or_default();
        let mut clique: Vec<VarId> = neighbors.iter().copied().collect();
        clique.push(v);
        cliques.push(Scope::new(clique));
        for a in &neighbors {
            if let Some(set) = live.get_mut(a) {
                set.remove(&v);
                for b in &neighbors {
                    if a != b {
                        set.insert(*b);
                    }
                }
            }
        }
    }

    // Keep maximal cliques only, in canonical order.
    cliques.sort();
    cliques.dedup();
    let maximal: Vec<Scope> = cliques
        .iter()
        .filter(|c| {
            !cliques
                .iter()
                .any(|d| *c != d && c.is_subset_of(d))
        })
        .cloned()
        .collect();
    let cliques = maximal;

    // Maximum-weight spanning tree over pairwise intersections.
    let n = cliques.len();
    let mut candidate_edges: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = cliques[i].intersection(&cliques[j]).len();
            if w > 0 {
                candidate_edges.push((i, j, w));
            }
        }
    }
    candidate_edges.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));

    let mut dsu = Dsu::new(n);
    let mut edges = Vec::new();
    for (i, j, _) in candidate_edges {
        if dsu.union(i, j) {
            edges.push(JtEdge {
                a: i,
                b: j,
                separator: cliques[i].intersection(&cliques[j]),
            });
        }
    }
    // Join any remaining components with empty separators so the result is a
    // single tree even for models with independent blocks.
    for j in 1..n {
        if dsu.union(0, j) {
            edges.push(JtEdge {
                a: 0,
                b: j,
                separator: Scope::empty(),
            });
        }
    }
    edges.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));

    let tree = ExternalJunctionTree {
        cliques,
        edges,
        marginals: None,
    };
    debug_assert!(tree.verify_rip());
    Ok(tree)
}

fn min_fill_order(adj: &BTreeMap<VarId, BTreeSet<VarId>>) -> Vec<VarId> {
    let mut live = adj.clone();
    let mut order = Vec::with_capacity(live.len());
    while !live.is_empty() {
        let mut best: Option<(usize, VarId)> = None;
        for (&v, ns) in &live {
            let ns: Vec<VarId> = ns.iter().copied().collect();
            let mut fill = 0;
            for (a, &x) in ns.iter().enumerate() {
                for &y in &ns[a + 1..] {
                    if !live[&x].contains(&y) {
                        fill += 1;
                    }
                }
            }
            // BTreeMap iteration is ascending, so ties keep the smallest id.
            if best.map(|(bf, _)| fill < bf).unwrap_or(true) {
                best = Some((fill, v));
            }
        }
        let (_, v) = best.unwrap();
        let neighbors = live.remove(&v).unwrap();
        for a in &neighbors {
            if let Some(set) = live.get_mut(a) {
                set.remove(&v);
                for b in &neighbors {
                    if a != b {
                        set.insert(*b);
                    }
                }
            }
        }
        order.push(v);
    }
    order
}

/// Replace the tree's implicit potentials with exact clique marginals of the
/// prior, computed by a two-pass sum-product sweep and normalized so each
/// marginal integrates to one.
///
/// Afterwards the prior equals the product of clique marginals divided by
/// the product of separator marginals, which is the representation the
/// distribution layer replicates across nodes.
pub fn reparameterize(
    tree: &mut ExternalJunctionTree,
    model: &ProbModel,
) -> Result<(), ModelError> {
    let n = tree.cliques.len();
    let mut potentials: Vec<GaussianFactor> = tree
        .cliques
        .iter()
        .map(|c| GaussianFactor::uniform(c.clone()))
        .collect();
    for p in model.priors() {
        let c = tree.covering_clique(p.scope()).ok_or_else(|| {
            ModelError::Invalid("no clique covers a prior factor".into())
        })?;
        potentials[c] = potentials[c].multiply(p)?;
    }

    let mut adj = vec![Vec::new(); n];
    for e in &tree.edges {
        adj[e.a].push((e.b, e.separator.clone()));
        adj[e.b].push((e.a, e.separator.clone()));
    }
    for a in &mut adj {
        a.sort_by_key(|(i, _)| *i);
    }

    // Root at clique 0; compute a traversal order.
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut order = vec![0usize];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut qi = 0;
    while qi < order.len() {
        let c = order[qi];
        qi += 1;
        for (nb, _) in &adj[c] {
            if !seen[*nb] {
                seen[*nb] = true;
                parent[*nb] = Some(c);
                order.push(*nb);
            }
        }
    }

    // Messages along directed edges, collect then distribute.
    let mut msg: BTreeMap<(usize, usize), GaussianFactor> = BTreeMap::new();
    for &c in order.iter().rev() {
        if let Some(p) = parent[c] {
            let sep = adj[c]
                .iter()
                .find(|(nb, _)| *nb == p)
                .map(|(_, s)| s.clone())
                .unwrap();
            let mut prod = potentials[c].clone();
            for (nb, _) in &adj[c] {
                if *nb != p {
                    prod = prod.multiply(&msg[&(*nb, c)])?;
                }
            }
            msg.insert((c, p), prod.marginalize(&sep)?);
        }
    }
    for &c in order.iter() {
        for (nb, sep) in adj[c].clone() {
            if parent[nb] == Some(c) {
                let mut prod = potentials[c].clone();
                for (other, _) in &adj[c] {
                    if *other != nb {
                        prod = prod.multiply(&msg[&(*other, c)])?;
                    }
                }
                msg.insert((c, nb), prod.marginalize(&sep)?);
            }
        }
    }

    let mut marginals = Vec::with_capacity(n);
    for c in 0..n {
        let mut belief = potentials[c].clone();
        for (nb, _) in &adj[c] {
            belief = belief.multiply(&msg[&(*nb, c)])?;
        }
        marginals.push(belief.normalized()?);
    }

    // Calibration: adjacent marginals must agree on their separator.
    for e in &tree.edges {
        let ma = marginals[e.a].marginalize(&e.separator)?;
        let mb = marginals[e.b].marginalize(&e.separator)?;
        if ma.dist_param_delta(&mb) > 1e-9 {
            return Err(ModelError::Invalid(format!(
                "clique marginals disagree on separator {} by {:.3e}",
                e.separator,
                ma.dist_param_delta(&mb)
            )));
        }
    }

    tree.marginals = Some(marginals);
    Ok(())
}
