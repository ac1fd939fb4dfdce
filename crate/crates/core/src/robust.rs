//! The robust inference lane: model fragments exchanged over the tree.
//!
//! Each node starts from a local fragment built out of exact clique
//! marginals of the prior (for the cliques allocated to it) plus one
//! prior/likelihood factor per measurement it owns. Messages to a tree
//! neighbor summarize everything known from the other directions onto the
//! edge's separator; beliefs flatten everything known into one factor and
//! read the posterior off it.
//!
//! What makes the lane robust is what it does NOT require: messages may be
//! lost, replayed, or arrive before the structure settles, and replicas of
//! the same marginal may flow in from several branches. Fragment insertion
//! drops interchangeable replicas, combination divides out exactly the
//! prior overlap, and the belief readout refuses to count any measurement
//! twice. A belief computed from any subset of the traffic is a proper
//! density over the query, just possibly a less informed one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gauss::{GaussError, GaussianFactor, Scope};
use crate::model::{ExternalJunctionTree, ModelError, NodeAllocation, ProbModel};
use crate::netsim::WireSize;
use crate::overlay::{gaussian_payload_bytes, InferenceLayer};
use crate::plf::{ModelFragment, PlFactor, PlfError};
use crate::NodeId;

/// Parameter change below which a recomputed message is not worth resending.
pub const CHANGE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("fragment algebra failed: {0}")]
    Plf(#[from] PlfError),
    #[error("model construction failed: {0}")]
    Model(#[from] ModelError),
    #[error("dense algebra failed: {0}")]
    Gauss(#[from] GaussError),
    #[error("{0}")]
    Invalid(String),
}

impl WireSize for ModelFragment {
    /// Serialized size: a small fragment header plus, per member, the
    /// variable ids and triangular information forms of both parts and the
    /// evidence tags.
    fn wire_bytes(&self) -> usize {
        16 + self
            .members()
            .iter()
            .map(|m| {
                4 * m.scope().len()
                    + gaussian_payload_bytes(m.scope().total_dim())
                    + 4 * m.likelihood().scope().len()
                    + gaussian_payload_bytes(m.likelihood().scope().total_dim())
                    + 4 * m.evidence().len()
            })
            .sum::<usize>()
    }
}

/// A query-marginal readout. `valid` is false when the available
/// information does not pin down a proper density (or the readout failed
/// outright); consumers must treat such estimates as absent.
#[derive(Clone, Debug)]
pub struct RobustBelief {
    pub payload: GaussianFactor,
    pub valid: bool,
}

/// Did the two fragments move apart by more than the resend threshold?
fn fragment_changed(a: &ModelFragment, b: &ModelFragment) -> bool {
    a.len() != b.len()
        || a.members()
            .iter()
            .zip(b.members())
            .any(|(x, y)| x.param_delta(y) > CHANGE_TOL)
}

/// Per-node state of the robust lane.
pub struct RobustLayer {
    query: Scope,
    local: ModelFragment,
    inbox: BTreeMap<NodeId, ModelFragment>,
    seps: BTreeMap<NodeId, Scope>,
    last_sent: BTreeMap<NodeId, ModelFragment>,
}

impl RobustLayer {
    pub fn new(query: Scope, local: ModelFragment) -> Self {
        RobustLayer {
            query,
            local,
            inbox: BTreeMap::new(),
            seps: BTreeMap::new(),
            last_sent: BTreeMap::new(),
        }
    }

    /// Build the node's local fragment from its allocation: one prior
    /// member per allocated clique (the exact clique marginal) and one
    /// evidence member per owned measurement, whose prior part is the
    /// marginal over the measurement's inputs.
    pub fn from_allocation(
        model: &ProbModel,
        tree: &ExternalJunctionTree,
        alloc: &NodeAllocation,
    ) -> Result<Self, RobustError> {
        let mut local = ModelFragment::new();
        for &c in &alloc.cliques {
            let marginal = tree.marginal(c).ok_or_else(|| {
                RobustError::Invalid("junction tree carries no marginals; reparameterize first".into())
            })?;
            local.insert(PlFactor::from_prior(marginal.clone()));
        }
        for &mid in &alloc.measurements {
            let meas = model.measurement(mid);
            let observation = meas.observed.ok_or_else(|| {
                RobustError::Invalid(format!("measurement {} has no observed value", meas.name))
            })?;
            let c = tree.covering_clique(&meas.parents).ok_or_else(|| {
                RobustError::Invalid(format!(
                    "no clique covers the inputs of measurement {}",
                    meas.name
                ))
            })?;
            let parent_prior = tree
                .marginal(c)
                .expect("marginals checked above")
                .marginalize(&meas.parents)?;
            local.insert(PlFactor::instantiate(
                &meas.model_factor()?,
                meas.var,
                mid,
                observation,
                parent_prior,
            )?);
        }
        Ok(RobustLayer::new(alloc.query.clone(), local))
    }

    pub fn query(&self) -> &Scope {
        &self.query
    }

    pub fn local_fragment(&self) -> &ModelFragment {
        &self.local
    }

    pub fn inbox_fragment(&self, from: NodeId) -> Option<&ModelFragment> {
        self.inbox.get(&from)
    }

    /// Everything this node currently knows, as one fragment.
    fn knowledge(&self, exclude: Option<NodeId>) -> Result<ModelFragment, PlfError> {
        let mut combined = self.local.clone();
        for (&from, fragment) in &self.inbox {
            if Some(from) != exclude {
                combined = combined.union(fragment, false)?;
            }
        }
        Ok(combined)
    }

    /// The current query belief: flatten all knowledge, read the posterior,
    /// marginalize onto the query, and normalize.
    pub fn belief(&self) -> RobustBelief {
        let fallback = || RobustBelief {
            payload: GaussianFactor::uniform(self.query.clone()),
            valid: false,
        };
        let Ok(combined) = self.knowledge(None) else {
            return fallback();
        };
        let Ok(flat) = combined.flatten() else {
            return fallback();
        };
        let Ok(posterior) = flat.posterior() else {
            return fallback();
        };
        if !self.query.is_subset_of(posterior.scope()) {
            return fallback();
        }
        let Ok(marginal) = posterior.marginalize(&self.query) else {
            return fallback();
        };
        match marginal.normalized() {
            Ok(normalized) => RobustBelief { payload: normalized, valid: true },
            Err(_) => RobustBelief { payload: marginal, valid: false },
        }
    }
}

impl InferenceLayer for RobustLayer {
    type Payload = ModelFragment;

    fn set_separators(&mut self, seps: BTreeMap<NodeId, Scope>) {
        self.inbox.retain(|peer, _| seps.contains_key(peer));
        self.last_sent.retain(|peer, _| seps.contains_key(peer));
        self.seps = seps;
    }

    fn receive(&mut self, from: NodeId, payload: ModelFragment) {
        if self.seps.contains_key(&from) {
            self.inbox.insert(from, payload);
        }
    }

    fn invalidate(&mut self, peer: NodeId) {
        self.last_sent.remove(&peer);
    }

    fn drain_outgoing(&mut self) -> Vec<(NodeId, ModelFragment)> {
        let mut out = Vec::new();
        for (&peer, sep) in &self.seps {
            let message = match self
                .knowledge(Some(peer))
                .and_then(|k| k.summarize(sep))
            {
                Ok(m) => m,
                Err(e) => {
                    log::error!("message toward {peer} failed: {e}; retrying next drain");
                    continue;
                }
            };
            let unchanged = self
                .last_sent
                .get(&peer)
                .is_some_and(|prev| !fragment_changed(prev, &message));
            if !unchanged {
                self.last_sent.insert(peer, message.clone());
                out.push((peer, message));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use crate::gauss::VarId;
    use crate::model::{build_external_jtree, distribute, reparameterize, EliminationOrder};
    use crate::overlay::central_junction;
    use crate::MeasId;

    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    fn scalar_prior(v: VarId, mean: f64, variance: f64) -> GaussianFactor {
        GaussianFactor::from_moments(
            Scope::new(vec![v]),
            nalgebra::DVector::from_element(1, mean),
            nalgebra::DMatrix::from_element(1, 1, variance),
        )
        .unwrap()
    }

    /// Three sensors on a temperature chain, each with its own bias: the
    /// canonical calibration shape. Node i owns measurement i and queries
    /// its own (temperature, bias) pair.
    fn fixture() -> (ProbModel, ExternalJunctionTree) {
        let mut model = ProbModel::new();
        let t: Vec<VarId> = (0..3).map(|i| model.add_var(format!("t{i}"), 1)).collect();
        let b: Vec<VarId> = (0..3).map(|i| model.add_var(format!("b{i}"), 1)).collect();

        // A proper chain prior over temperatures: anchor plus couplings.
        model.add_prior(scalar_prior(t[0], 0.0, 4.0));
        for w in t.windows(2) {
            model.add_prior(GaussianFactor::linear_gaussian(w[1], &[(w[0], 1.0)], 0.0, 1.0).unwrap());
        }
        for &bi in &b {
            model.add_prior(scalar_prior(bi, 0.0, 1.0));
        }
        let readings = [1.3, -0.4, 0.9];
        for i in 0..3 {
            model.add_measurement(
                format!("m{i}"),
                n(i as u32),
                Scope::new([t[i], b[i]].into()),
                vec![1.0, 1.0],
                0.0,
                0.25,
                Some(readings[i]),
            );
            model.set_query(n(i as u32), Scope::new([t[i], b[i]].into()));
        }
        let mut tree = build_external_jtree(&model, EliminationOrder::MinFill).unwrap();
        reparameterize(&mut tree, &model).unwrap();
        (model, tree)
    }

    /// Dense posterior over `query` given exactly `delivered` measurements.
    fn oracle(model: &ProbModel, delivered: &[MeasId], query: &Scope) -> GaussianFactor {
        let mut joint = model.joint_prior().unwrap();
        for &mid in delivered {
            let lik = model.measurement(mid).likelihood().unwrap().unwrap();
            joint = joint.multiply(&lik).unwrap();
        }
        joint.marginalize(query).unwrap().normalized().unwrap()
    }

    fn layers_for(
        model: &ProbModel,
        tree: &ExternalJunctionTree,
        redundancy: u32,
    ) -> Vec<RobustLayer> {
        let nodes: Vec<NodeId> = (0..3).map(n).collect();
        let alloc = distribute(tree, model, &nodes, redundancy).unwrap();
        nodes
            .iter()
            .map(|&i| RobustLayer::from_allocation(model, tree, alloc.node(i)).unwrap())
            .collect()
    }

    /// Wire the three layers in a path 0-1-2 with separators from the
    /// network junction-tree fixed point over their allocated variables.
    fn wire_path(model: &ProbModel, tree: &ExternalJunctionTree, redundancy: u32) -> Vec<RobustLayer> {
        let nodes: Vec<NodeId> = (0..3).map(n).collect();
        let alloc = distribute(tree, model, &nodes, redundancy).unwrap();
        let edges = vec![(n(0), n(1)), (n(1), n(2))];
        let vars: BTreeMap<NodeId, Scope> = nodes
            .iter()
            .map(|&i| (i, alloc.node(i).local_vars.clone()))
            .collect();
        let cj = central_junction(&edges, &vars);
        let mut layers = layers_for(model, tree, redundancy);
        for (i, layer) in layers.iter_mut().enumerate() {
            let mut seps = BTreeMap::new();
            for (&(a, b), s) in &cj.separators {
                if a == n(i as u32) {
                    seps.insert(b, s.clone());
                }
            }
            layer.set_separators(seps);
        }
        layers
    }

    /// Synchronous rounds until quiescent; returns rounds taken.
    fn pump(layers: &mut [RobustLayer]) -> usize {
        for round in 0..20 {
            let mut mail = Vec::new();
            for (i, layer) in layers.iter_mut().enumerate() {
                for (to, frag) in layer.drain_outgoing() {
                    mail.push((n(i as u32), to, frag));
                }
            }
            if mail.is_empty() {
                return round;
            }
            for (from, to, frag) in mail {
                layers[to.0 as usize].receive(from, frag);
            }
        }
        panic!("message exchange did not quiesce");
    }

    #[test]
    fn zero_messages_yield_the_local_posterior() {
        let (model, tree) = fixture();
        let layers = layers_for(&model, &tree, 1);
        for (i, layer) in layers.iter().enumerate() {
            let belief = layer.belief();
            assert!(belief.valid, "local belief of node {i} must be proper");
            let want = oracle(&model, &[MeasId(i as u32)], layer.query());
            assert!(
                belief.payload.dist_param_delta(&want) < 1e-9,
                "node {i}: local belief must equal the own-measurements posterior"
            );
        }
    }

    #[test]
    fn converged_exchange_reaches_the_global_posterior() {
        let (model, tree) = fixture();
        for redundancy in [1, 2, 3] {
            let mut layers = wire_path(&model, &tree, redundancy);
            pump(&mut layers);
            let all: Vec<MeasId> = (0..3).map(MeasId).collect();
            for (i, layer) in layers.iter().enumerate() {
                let belief = layer.belief();
                assert!(belief.valid);
                let want = oracle(&model, &all, layer.query());
                assert!(
                    belief.payload.dist_param_delta(&want) < 1e-8,
                    "node {i} at redundancy {redundancy}: converged belief must be exact"
                );
            }
        }
    }

    #[test]
    fn quiescence_means_silence() {
        let (model, tree) = fixture();
        let mut layers = wire_path(&model, &tree, 2);
        pump(&mut layers);
        for layer in layers.iter_mut() {
            assert!(layer.drain_outgoing().is_empty(), "quiescent layers must not resend");
        }
    }

    #[test]
    fn invalidate_resends_only_that_peer() {
        let (model, tree) = fixture();
        let mut layers = wire_path(&model, &tree, 1);
        pump(&mut layers);
        layers[1].invalidate(n(2));
        let out = layers[1].drain_outgoing();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, n(2));
        assert!(layers[1].drain_outgoing().is_empty(), "one resend, then quiet again");
    }

    #[test]
    fn detached_branch_loses_exactly_its_evidence() {
        let (model, tree) = fixture();
        let mut layers = wire_path(&model, &tree, 1);
        pump(&mut layers);
        // Node 2 detaches: nodes 0 and 1 must fall back to the posterior
        // over the measurements on their side, and node 2 to its own.
        let solo: BTreeMap<NodeId, Scope> = BTreeMap::new();
        layers[2].set_separators(solo);
        let mut seps1: BTreeMap<NodeId, Scope> = BTreeMap::new();
        let kept = layers[1].seps[&n(0)].clone();
        seps1.insert(n(0), kept);
        layers[1].set_separators(seps1);
        pump(&mut layers);

        let side = [MeasId(0), MeasId(1)];
        for i in [0usize, 1] {
            let belief = layers[i].belief();
            assert!(belief.valid, "partition must not invalidate beliefs");
            let want = oracle(&model, &side, layers[i].query());
            assert!(
                belief.payload.dist_param_delta(&want) < 1e-8,
                "node {i}: belief must equal its side's posterior"
            );
        }
        let belief2 = layers[2].belief();
        let want2 = oracle(&model, &[MeasId(2)], layers[2].query());
        assert!(belief2.valid);
        assert!(belief2.payload.dist_param_delta(&want2) < 1e-8);
    }

    #[test]
    fn replicas_never_double_count() {
        let (model, tree) = fixture();
        // With full replication every node holds every clique marginal;
        // exchange floods replicas everywhere. The belief must still be
        // exactly the global posterior.
        let mut layers = wire_path(&model, &tree, 3);
        pump(&mut layers);
        let all: Vec<MeasId> = (0..3).map(MeasId).collect();
        for layer in &layers {
            let want = oracle(&model, &all, layer.query());
            let belief = layer.belief();
            assert!(belief.valid);
            assert!(belief.payload.dist_param_delta(&want) < 1e-8);
        }
    }

    #[test]
    fn message_members_stay_within_the_external_clique_bound() {
        let (model, tree) = fixture();
        let bound = tree.max_clique_vars();
        let mut layers = wire_path(&model, &tree, 2);
        for _ in 0..20 {
            let mut mail = Vec::new();
            for (i, layer) in layers.iter_mut().enumerate() {
                for (to, frag) in layer.drain_outgoing() {
                    for m in frag.members() {
                        assert!(
                            m.scope().len() <= bound,
                            "message member over {} exceeds the clique bound {bound}",
                            m.scope()
                        );
                    }
                    mail.push((n(i as u32), to, frag));
                }
            }
            if mail.is_empty() {
                break;
            }
            for (from, to, frag) in mail {
                layers[to.0 as usize].receive(from, frag);
            }
        }
    }

    #[test]
    fn fragment_wire_size_counts_members() {
        let (model, tree) = fixture();
        let layers = layers_for(&model, &tree, 1);
        let frag = layers[0].local_fragment();
        assert!(!frag.is_empty());
        let by_hand: usize = 16
            + frag
                .members()
                .iter()
                .map(|m| {
                    4 * m.scope().len()
                        + gaussian_payload_bytes(m.scope().total_dim())
                        + 4 * m.likelihood().scope().len()
                        + gaussian_payload_bytes(m.likelihood().scope().total_dim())
                        + 4 * m.evidence().len()
                })
                .sum::<usize>();
        assert_eq!(frag.wire_bytes(), by_hand);
        let empty = ModelFragment::new();
        assert_eq!(empty.wire_bytes(), 16);
    }
}
