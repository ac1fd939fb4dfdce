//! Spanning-tree formation over estimated links.
//!
//! The tree is rooted at the smallest node id that can be heard of, and
//! every other node picks one parent, preferring the best product of
//! estimated link rates along the path to the root. Edges live entirely in
//! beacons: a node claims its parent in every beacon, and a parent derives
//! its child set from those claims, so both endpoints agree on every edge
//! once beacons have crossed.
//!
//! Repair is local. A parent is abandoned when it goes silent past the loss
//! horizon, when its advertised path develops a cycle through us, or when
//! its root goes stale (the root stamps a freshness counter into beacons;
//! if the maximum stamp we have seen for a root stops advancing, everyone
//! relying on that root re-elects, which is how the death of a root
//! propagates beyond its immediate neighbors). A standing parent is never
//! abandoned merely because a slightly better one appears; quality-driven
//! restructuring is the optimizer's job, which calls [`TreeState::adopt_parent`].

use std::collections::{BTreeMap, BTreeSet};

use crate::NodeId;

use super::links::LinkTable;
use super::msg::Beacon;

#[derive(Clone, Debug)]
pub(super) struct Advert {
    pub root: NodeId,
    pub path: Vec<NodeId>,
    pub path_rate: f64,
}

#[derive(Clone, Debug)]
pub(super) struct TreeState {
    me: NodeId,
    parent: Option<NodeId>,
    /// My path to the root, starting with me.
    path: Vec<NodeId>,
    path_rate: f64,
    children: BTreeSet<NodeId>,
    /// Latest tree view per peer, from its beacons.
    adverts: BTreeMap<NodeId, Advert>,
    /// Per root id: highest freshness stamp seen and when it last advanced.
    freshness: BTreeMap<NodeId, (u64, f64)>,
    epoch: u64,
    stale_horizon: f64,
}

impl TreeState {
    pub fn new(me: NodeId, beacon_period: f64, k_loss: u32) -> Self {
        TreeState {
            me,
            parent: None,
            path: vec![me],
            path_rate: 1.0,
            children: BTreeSet::new(),
            adverts: BTreeMap::new(),
            freshness: BTreeMap::new(),
            epoch: 0,
            stale_horizon: beacon_period * k_loss as f64,
        }
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn children(&self) -> &BTreeSet<NodeId> {
        &self.children
    }

    pub fn root(&self) -> NodeId {
        *self.path.last().expect("path always ends at the root")
    }

    #[cfg(test)]
    pub fn path(&self) -> &[NodeId] {
        &self.path
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Tree neighbors: children plus the parent, ascending.
    pub fn neighbors(&self) -> BTreeSet<NodeId> {
        let mut n = self.children.clone();
        if let Some(p) = self.parent {
            n.insert(p);
        }
        n
    }

    pub fn advert(&self, peer: NodeId) -> Option<&Advert> {
        self.adverts.get(&peer)
    }

    /// Record a peer's beacon. Returns true when the neighbor set changed
    /// (a child appeared or walked away).
    pub fn on_beacon(&mut self, from: NodeId, b: &Beacon, now: f64) -> bool {
        self.note_root(b.root, b.root_seq, now);
        self.adverts.insert(
            from,
            Advert {
                root: b.root,
                path: b.path.clone(),
                path_rate: b.path_rate,
            },
        );
        let claims_me = b.parent == Some(self.me);
        let changed = if claims_me {
            self.children.insert(from)
        } else {
            self.children.remove(&from)
        };
        if changed {
            self.epoch += 1;
        }
        changed
    }

    fn note_root(&mut self, root: NodeId, root_seq: u64, now: f64) {
        let entry = self.freshness.entry(root).or_insert((root_seq, now));
        if root_seq > entry.0 {
            *entry = (root_seq, now);
        }
    }

    fn root_is_fresh(&self, root: NodeId, now: f64) -> bool {
        if root == self.me {
            return true;
        }
        match self.freshness.get(&root) {
            Some(&(_, advanced)) => now - advanced <= self.stale_horizon,
            None => false,
        }
    }

    /// The freshness stamp to relay in my own beacon.
    fn root_seq_out(&self, own_seq: u64) -> u64 {
        if self.is_root() {
            own_seq
        } else {
            self.freshness.get(&self.root()).map_or(0, |&(s, _)| s)
        }
    }

    /// Can `peer`'s advertisement serve as my path to a root right now?
    fn usable_parent(&self, peer: NodeId, links: &LinkTable, now: f64) -> bool {
        let Some(ad) = self.adverts.get(&peer) else {
            return false;
        };
        links.is_candidate(peer)
            && !ad.path.contains(&self.me)
            && self.root_is_fresh(ad.root, now)
    }

    /// Periodic upkeep, run once per beacon tick before beaconing. Prunes
    /// lost children, validates the parent, re-elects when needed, and
    /// refreshes the advertised path. Returns true when the neighbor set
    /// changed.
    pub fn maintain(&mut self, links: &LinkTable, now: f64, own_seq: u64) -> bool {
        let mut changed = false;

        let lost_children: Vec<NodeId> = self
            .children
            .iter()
            .copied()
            .filter(|&c| links.is_lost(c))
            .collect();
        for c in lost_children {
            self.children.remove(&c);
            self.adverts.remove(&c);
            changed = true;
        }

        if self.is_root() {
            self.note_root(self.me, own_seq, now);
        }

        let parent_ok = match self.parent {
            None => true,
            Some(p) => !links.is_lost(p) && {
                match self.adverts.get(&p) {
                    // No advert yet: tolerated briefly; loss marking will
                    // catch a truly silent parent.
                    None => true,
                    Some(ad) => {
                        !ad.path.contains(&self.me) && self.root_is_fresh(ad.root, now)
                    }
                }
            },
        };

        // A strictly smaller fresh root anywhere in earshot forces a
        // re-election even with a healthy parent.
        let smaller_root_available = self
            .adverts
            .iter()
            .any(|(&j, ad)| ad.root < self.root() && self.usable_parent(j, links, now));

        if !parent_ok || smaller_root_available {
            changed |= self.elect(links, now);
        }

        self.refresh_path(links);
        if changed {
            self.epoch += 1;
        }
        changed
    }

    /// Pick the best parent (or become root) from current advertisements.
    fn elect(&mut self, links: &LinkTable, now: f64) -> bool {
        let mut best: Option<(NodeId, NodeId, f64)> = None; // (root, peer, metric)
        for (&j, ad) in &self.adverts {
            if !self.usable_parent(j, links, now) {
                continue;
            }
            let metric = links.rate(j) * ad.path_rate;
            let better = match best {
                None => true,
                Some((r, p, m)) => {
                    (ad.root, -metric, j).partial_cmp(&(r, -m, p)) == Some(std::cmp::Ordering::Less)
                }
            };
            if better {
                best = Some((ad.root, j, metric));
            }
        }
        let old_parent = self.parent;
        match best {
            Some((root, peer, _)) if root < self.me => {
                self.parent = Some(peer);
            }
            _ => {
                self.parent = None;
                self.path = vec![self.me];
                self.path_rate = 1.0;
                self.note_root(self.me, self.freshness.get(&self.me).map_or(0, |f| f.0), now);
            }
        }
        self.refresh_path(links);
        self.parent != old_parent
    }

    /// Keep my advertised path consistent with my parent's latest one.
    fn refresh_path(&mut self, links: &LinkTable) {
        match self.parent {
            None => {
                self.path = vec![self.me];
                self.path_rate = 1.0;
            }
            Some(p) => {
                if let Some(ad) = self.adverts.get(&p) {
                    if !ad.path.contains(&self.me) {
                        let mut path = Vec::with_capacity(ad.path.len() + 1);
                        path.push(self.me);
                        path.extend_from_slice(&ad.path);
                        self.path = path;
                        self.path_rate = links.rate(p) * ad.path_rate;
                    }
                }
            }
        }
    }

    /// Reparent onto `peer` (the optimizer committing a swap). The caller
    /// has verified legality; this just applies it and bumps the epoch.
    pub fn adopt_parent(&mut self, peer: NodeId, links: &LinkTable) {
        if self.parent == Some(peer) {
            return;
        }
        self.parent = Some(peer);
        self.refresh_path(links);
        self.epoch += 1;
    }

    pub fn beacon(&self, own_seq: u64) -> Beacon {
        Beacon {
            seq: own_seq,
            root: self.root(),
            root_seq: self.root_seq_out(own_seq),
            parent: self.parent,
            path: self.path.clone(),
            path_rate: self.path_rate,
        }
    }
}
