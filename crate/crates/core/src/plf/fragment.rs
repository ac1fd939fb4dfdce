//! Fragments: collections of prior/likelihood factors that jointly describe
//! a piece of the model.
//!
//! A fragment's members cover possibly overlapping scopes. A spanning forest
//! over the scope-intersection graph (heaviest intersections first) gives the
//! canonical order in which members are merged: [`ModelFragment::flatten`]
//! collapses everything into one factor for belief readout, while
//! [`ModelFragment::summarize`] prunes only the members whose contribution to
//! a kept set is covered by a neighbor, which is the message-sized form sent
//! between nodes.

use std::collections::BTreeSet;

use crate::gauss::Scope;
use crate::util::Dsu;
use crate::MeasId;

use super::factor::{pl_combine, pl_summary, PlFactor, PlfError};

/// Two factors whose parameters differ by no more than this are replicas.
pub const REPLICA_TOL: f64 = 1e-12;

/// A deduplicated, canonically ordered collection of prior/likelihood
/// factors.
#[derive(Clone, Debug, Default)]
pub struct ModelFragment {
    members: Vec<PlFactor>,
}

impl ModelFragment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn members(&self) -> &[PlFactor] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Insert a factor unless an interchangeable replica is already present.
    /// Returns whether the fragment changed.
    pub fn insert(&mut self, f: PlFactor) -> bool {
        if self
            .members
            .iter()
            .any(|m| m.is_replica_of(&f, REPLICA_TOL))
        {
            return false;
        }
        let at = self
            .members
            .partition_point(|m| m.cmp_key(&f) != std::cmp::Ordering::Greater);
        self.members.insert(at, f);
        true
    }

    /// Union with another fragment. With `absorb` set, members whose scope is
    /// strictly contained in another member's scope are folded into that
    /// member, which keeps fragments from accumulating covered factors.
    pub fn union(&self, other: &ModelFragment, absorb: bool) -> Result<ModelFragment, PlfError> {
        let mut out = self.clone();
        for m in &other.members {
            out.insert(m.clone());
        }
        if absorb {
            out.absorb_covered()?;
        }
        Ok(out)
    }

    /// Fold every member whose scope is strictly inside another member's
    /// scope into that member (smallest key first, into its first superset in
    /// key order). Members claiming overlapping evidence are left alone; they
    /// cannot be merged without double-counting.
    pub fn absorb_covered(&mut self) -> Result<(), PlfError> {
        'scan: loop {
            for i in 0..self.members.len() {
                for j in 0..self.members.len() {
                    if i == j {
                        continue;
                    }
                    let (small, big) = (&self.members[i], &self.members[j]);
                    if small.scope().len() < big.scope().len()
                        && small.scope().is_subset_of(big.scope())
                        && small.evidence().is_disjoint(big.evidence())
                    {
                        let merged = pl_combine(big, small)?;
                        let (lo, hi) = (i.min(j), i.max(j));
                        self.members.remove(hi);
                        self.members.remove(lo);
                        self.insert(merged);
                        continue 'scan;
                    }
                }
            }
            return Ok(());
        }
    }

    /// Edges of the canonical merge forest: a maximum-weight spanning forest
    /// over members, weighted by scope-intersection size, ties broken toward
    /// earlier members. Disjoint-scope members stay in separate components.
    pub fn canonical_tree(&self) -> Vec<(usize, usize)> {
        canonical_tree_of(&self.members)
    }

    /// Merge everything into a single factor, heaviest overlaps first.
    ///
    /// Members whose evidence was already counted by an earlier member are
    /// dropped; this is the transient-state guard that keeps a belief from
    /// counting one measurement twice while the tree is reshaping around
    /// it. The result's prior is always a proper density, so the posterior
    /// read from it is always valid.
    pub fn flatten(&self) -> Result<PlFactor, PlfError> {
        let mut kept: Vec<PlFactor> = Vec::with_capacity(self.members.len());
        let mut counted: BTreeSet<MeasId> = BTreeSet::new();
        for m in &self.members {
            if m.evidence().iter().any(|e| counted.contains(e)) {
                log::debug!(
                    "belief readout drops a factor over {}: evidence {:?} already counted",
                    m.scope(),
                    m.evidence()
                );
                continue;
            }
            counted.extend(m.evidence().iter().copied());
            kept.push(m.clone());
        }
        if kept.is_empty() {
            return Err(PlfError::EmptyFragment);
        }

        let edges = canonical_tree_of(&kept);
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); kept.len()];
        for &(i, j) in &edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        let mut slots: Vec<Option<PlFactor>> = kept.into_iter().map(Some).collect();

        // Merge the lowest-indexed leaf into its neighbor until only
        // component representatives remain.
        loop {
            let Some(leaf) = (0..slots.len())
                .find(|&i| slots[i].is_some() && adj[i].len() == 1)
            else {
                break;
            };
            let nb = *adj[leaf].first().unwrap();
            let merged = pl_combine(
                slots[nb].as_ref().unwrap(),
                slots[leaf].as_ref().unwrap(),
            )?;
            slots[nb] = Some(merged);
            slots[leaf] = None;
            adj[nb].remove(&leaf);
            adj[leaf].clear();
        }

        // Fold disconnected components together; their scopes are disjoint,
        // so this is a plain product.
        let mut acc: Option<PlFactor> = None;
        for s in slots.into_iter().flatten() {
            acc = Some(match acc {
                None => s,
                Some(a) => pl_combine(&a, &s)?,
            });
        }
        Ok(acc.unwrap())
    }

    /// Reduce the fragment to what matters for the variables in `keep`.
    ///
    /// Repeatedly prunes a forest leaf whose `keep`-relevant variables are
    /// already covered by its neighbor: the leaf is summarized onto the
    /// shared variables and folded into the neighbor, leaving the neighbor's
    /// prior untouched and transferring only likelihood and evidence. Stops
    /// when no leaf qualifies; the survivors are the summary.
    pub fn summarize(&self, keep: &Scope) -> Result<ModelFragment, PlfError> {
        self.summarize_picked(keep, &mut |_| 0)
    }

    /// Same as [`summarize`](Self::summarize), but the caller chooses among
    /// the qualifying leaves at each step (by position in the candidate
    /// list). Exists so tests can check order independence.
    pub(crate) fn summarize_picked(
        &self,
        keep: &Scope,
        pick: &mut dyn FnMut(&[usize]) -> usize,
    ) -> Result<ModelFragment, PlfError> {
        let edges = canonical_tree_of(&self.members);
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.members.len()];
        for &(i, j) in &edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        let mut slots: Vec<Option<PlFactor>> = self.members.iter().cloned().map(Some).collect();

        loop {
            let mut cands = Vec::new();
            for i in 0..slots.len() {
                let Some(leaf) = slots[i].as_ref() else {
                    continue;
                };
                if adj[i].len() != 1 {
                    continue;
                }
                let nb = *adj[i].first().unwrap();
                let nbf = slots[nb].as_ref().unwrap();
                let relevant = leaf.scope().intersection(keep);
                if relevant.is_subset_of(nbf.scope())
                    && leaf.evidence().is_disjoint(nbf.evidence())
                {
                    cands.push(i);
                }
            }
            if cands.is_empty() {
                break;
            }
            let leaf = cands[pick(&cands)];
            let nb = *adj[leaf].first().unwrap();
            let sep = slots[leaf]
                .as_ref()
                .unwrap()
                .scope()
                .intersection(slots[nb].as_ref().unwrap().scope());
            let msg = pl_summary(slots[leaf].as_ref().unwrap(), &sep)?;
            let merged = pl_combine(slots[nb].as_ref().unwrap(), &msg)?;
            slots[nb] = Some(merged);
            slots[leaf] = None;
            adj[nb].remove(&leaf);
            adj[leaf].clear();
        }

        let mut out = ModelFragment::new();
        for s in slots.into_iter().flatten() {
            out.insert(s);
        }
        Ok(out)
    }

    /// Union of all member evidence tags.
    pub fn evidence(&self) -> BTreeSet<MeasId> {
        let mut out = BTreeSet::new();
        for m in &self.members {
            out.extend(m.evidence().iter().copied());
        }
        out
    }

    /// Union of all member scopes.
    pub fn total_scope(&self) -> Scope {
        let mut out = Scope::empty();
        for m in &self.members {
            out = out.union(m.scope());
        }
        out
    }
}

impl FromIterator<PlFactor> for ModelFragment {
    fn from_iter<T: IntoIterator<Item = PlFactor>>(iter: T) -> Self {
        let mut out = ModelFragment::new();
        for f in iter {
            out.insert(f);
        }
        out
    }
}

fn canonical_tree_of(members: &[PlFactor]) -> Vec<(usize, usize)> {
    let n = members.len();
    let mut weighted = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = members[i].scope().intersection(members[j].scope()).len();
            if w > 0 {
                weighted.push((w, i, j));
            }
        }
    }
    weighted.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));
    let mut dsu = Dsu::new(n);
    let mut edges = Vec::new();
    for (_, i, j) in weighted {
        if dsu.union(i, j) {
            edges.push((i, j));
        }
    }
    edges.sort_unstable();
    edges
}
