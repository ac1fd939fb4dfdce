//! Classical junction-tree message passing, kept as the baseline lane.
//!
//! Each node holds a local factor over its clique and exchanges plain
//! marginals over separators. The math is textbook; what this module adds is
//! the accounting the baseline needs on an unreliable network: messages
//! computed through a numerically non-integrable elimination are flagged as
//! degenerate instead of aborting, and beliefs carry a validity bit so a run
//! can report how often the baseline's intermediate states were not proper
//! densities. The robust lane exists because this lane's partial products
//! are allowed to go wrong; here they are merely measured.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gauss::{GaussError, GaussianFactor, Scope};
use crate::model::{Allocation, ProbModel};
use crate::netsim::WireSize;
use crate::overlay::{sumprod_payload_bytes, InferenceLayer};
use crate::NodeId;

/// Parameter change below which a recomputed message is not worth resending.
const CHANGE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpError {
    #[error("dense algebra failed: {0}")]
    Gauss(#[from] GaussError),
    #[error("{0}")]
    Invalid(String),
}

impl WireSize for GaussianFactor {
    fn wire_bytes(&self) -> usize {
        sumprod_payload_bytes(self.scope())
    }
}

/// A separator marginal in flight from one node to another.
#[derive(Clone, Debug)]
pub struct SpMessage {
    pub from: NodeId,
    pub to: NodeId,
    /// Factor over the separator between `from` and `to`.
    pub payload: GaussianFactor,
    /// True when the sender had to fall back to generalized elimination
    /// because the eliminated block was not positive definite.
    pub degenerate: bool,
    /// Sender-side counter, bumped on every materially changed payload.
    pub version: u64,
}

/// A node's current belief over its clique.
#[derive(Clone, Debug)]
pub struct SpBelief {
    pub node: NodeId,
    pub payload: GaussianFactor,
    /// Whether the belief is a proper density.
    pub valid: bool,
}

/// Compute the outgoing payload toward one neighbor: the product of the
/// local factor and every other neighbor's message, restricted to `keep`
/// (the separator). Returns the payload and whether the elimination was
/// degenerate (non-integrable block, resolved by pseudoinverse).
///
/// The caller supplies `inbox` in a deterministic order; the product is
/// commutative up to floating-point association, so a fixed order keeps
/// runs reproducible.
pub fn sp_message_payload(
    local: &GaussianFactor,
    inbox: &[GaussianFactor],
    keep: &Scope,
) -> (GaussianFactor, bool) {
    let mut prod = local.clone();
    for m in inbox {
        prod = prod
            .multiply(m)
            .expect("factors of one model agree on dimensions");
    }
    // The separator may mention variables the local product has no
    // information about yet; widen so the payload always covers `keep`.
    if !keep.is_subset_of(prod.scope()) {
        prod = prod
            .multiply(&GaussianFactor::uniform(keep.clone()))
            .expect("factors of one model agree on dimensions");
    }
    match prod.marginalize(keep) {
        Ok(p) => (p, false),
        Err(_) => {
            let (p, _) = prod
                .marginalize_generalized(keep)
                .expect("generalized elimination is total");
            (p, true)
        }
    }
}

/// Combine the local factor with every neighbor message into the node's
/// belief, flagging whether the result is a proper density.
pub fn sp_belief_payload(
    local: &GaussianFactor,
    inbox: &[GaussianFactor],
) -> (GaussianFactor, bool) {
    let mut prod = local.clone();
    for m in inbox {
        prod = prod
            .multiply(m)
            .expect("factors of one model agree on dimensions");
    }
    let valid = prod.is_normalizable();
    (prod, valid)
}

/// Per-node state of the baseline lane.
///
/// The local factor is fixed at construction: the raw prior factors this
/// node was given (each prior factor lives on exactly one node) times the
/// likelihoods of its own measurements. Messages in the inbox are stored
/// as received, latest per peer, even when their scope disagrees with the
/// current separator: discarding them would lose information forever once
/// the transport has acknowledged them, while a stored stale message is
/// overwritten as soon as the sender's view changes. The price is that
/// beliefs computed mid-churn can be wrong, which is exactly the behavior
/// this lane is kept around to measure.
pub struct SumprodLayer {
    me: NodeId,
    query: Scope,
    local: GaussianFactor,
    inbox: BTreeMap<NodeId, GaussianFactor>,
    seps: BTreeMap<NodeId, Scope>,
    last_sent: BTreeMap<NodeId, GaussianFactor>,
}

impl SumprodLayer {
    pub fn new(me: NodeId, query: Scope, local: GaussianFactor) -> Self {
        SumprodLayer {
            me,
            query,
            local,
            inbox: BTreeMap::new(),
            seps: BTreeMap::new(),
            last_sent: BTreeMap::new(),
        }
    }

    /// Build the node's local factor from an allocation: every raw prior
    /// factor goes to the lowest-id node whose variable set covers it, and
    /// every measurement likelihood to the measurement's owner.
    pub fn from_allocation(
        model: &ProbModel,
        alloc: &Allocation,
        me: NodeId,
    ) -> Result<Self, SpError> {
        let query = alloc.node(me).query.clone();
        let mut local = GaussianFactor::uniform(query.clone());
        for p in model.priors() {
            let owner = alloc
                .per_node
                .iter()
                .find(|(_, a)| p.scope().is_subset_of(&a.local_vars))
                .map(|(n, _)| *n)
                .ok_or_else(|| {
                    SpError::Invalid(format!("no node's variables cover the prior over {}", p.scope()))
                })?;
            if owner == me {
                local = local.multiply(p)?;
            }
        }
        for m in model.measurements() {
            if m.owner == me {
                let lik = m.likelihood()?.ok_or_else(|| {
                    SpError::Invalid(format!("measurement {} has no observed value", m.name))
                })?;
                local = local.multiply(&lik)?;
            }
        }
        Ok(SumprodLayer::new(me, query, local))
    }

    pub fn query(&self) -> &Scope {
        &self.query
    }

    pub fn local_factor(&self) -> &GaussianFactor {
        &self.local
    }

    /// Inbox messages except the one from `exclude`, in peer-id order.
    fn inbox_except(&self, exclude: Option<NodeId>) -> Vec<GaussianFactor> {
        self.inbox
            .iter()
            .filter(|(&k, _)| Some(k) != exclude)
            .map(|(_, m)| m.clone())
            .collect()
    }

    /// The current query belief. Invalid when the available information
    /// does not pin down a proper density over the query.
    pub fn belief(&self) -> SpBelief {
        let (mut prod, _) = sp_belief_payload(&self.local, &self.inbox_except(None));
        if !self.query.is_subset_of(prod.scope()) {
            prod = prod
                .multiply(&GaussianFactor::uniform(self.query.clone()))
                .expect("widening by a uniform cannot conflict");
        }
        match prod.marginalize(&self.query) {
            Ok(m) => match m.normalized() {
                Ok(nm) => SpBelief { node: self.me, payload: nm, valid: true },
                Err(_) => SpBelief { node: self.me, payload: m, valid: false },
            },
            Err(_) => {
                let (m, _) = prod
                    .marginalize_generalized(&self.query)
                    .expect("generalized elimination is total");
                SpBelief { node: self.me, payload: m, valid: false }
            }
        }
    }
}

impl InferenceLayer for SumprodLayer {
    type Payload = GaussianFactor;

    fn set_separators(&mut self, seps: BTreeMap<NodeId, Scope>) {
        self.inbox.retain(|peer, _| seps.contains_key(peer));
        self.last_sent.retain(|peer, _| seps.contains_key(peer));
        self.seps = seps;
    }

    fn receive(&mut self, from: NodeId, payload: GaussianFactor) {
        if self.seps.contains_key(&from) {
            self.inbox.insert(from, payload);
        }
    }

    fn invalidate(&mut self, peer: NodeId) {
        self.last_sent.remove(&peer);
    }

    fn drain_outgoing(&mut self) -> Vec<(NodeId, GaussianFactor)> {
        let mut out = Vec::new();
        for (&peer, sep) in &self.seps {
            let (payload, degenerate) =
                sp_message_payload(&self.local, &self.inbox_except(Some(peer)), sep);
            if degenerate {
                log::debug!("{} -> {peer}: degenerate elimination", self.me);
            }
            let unchanged = self
                .last_sent
                .get(&peer)
                .is_some_and(|prev| prev.dist_param_delta(&payload) <= CHANGE_TOL);
            if !unchanged {
                self.last_sent.insert(peer, payload.clone());
                out.push((peer, payload));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use crate::gauss::VarId;

    use super::*;

    fn pair(a: VarId, b: VarId, coupling: f64, info: [f64; 2]) -> GaussianFactor {
        GaussianFactor::from_information(
            Scope::new(vec![a, b]),
            DMatrix::from_row_slice(2, 2, &[1.5, coupling, coupling, 1.5]),
            DVector::from_row_slice(&info),
            0.0,
        )
        .unwrap()
    }

    /// Scalar observation of one variable: precision 1/noise, mean at `obs`.
    fn reading(v: VarId, obs: f64, noise: f64) -> GaussianFactor {
        GaussianFactor::from_information(
            Scope::singleton(v),
            DMatrix::from_element(1, 1, 1.0 / noise),
            DVector::from_element(1, obs / noise),
            0.0,
        )
        .unwrap()
    }

    fn assert_dist_eq(a: &GaussianFactor, b: &GaussianFactor, tol: f64) {
        let d = a.dist_param_delta(b);
        assert!(d <= tol, "distributions differ by {d:.3e}");
    }

    /// Five variables a-b-c-d-e in a chain of pairwise couplings, one
    /// reading each on b, c, d, e, and an optional reading on a's side.
    struct Chain {
        v: [VarId; 5],
        priors: [GaussianFactor; 4],
        readings: [GaussianFactor; 4],
    }

    fn chain() -> Chain {
        let v: [VarId; 5] = std::array::from_fn(|i| VarId::scalar(i as u32));
        let [a, b, c, d, e] = v;
        Chain {
            v,
            priors: [
                pair(a, b, 0.6, [0.2, -0.1]),
                pair(b, c, 0.4, [0.0, 0.3]),
                pair(c, d, 0.5, [-0.2, 0.1]),
                pair(d, e, 0.3, [0.1, 0.0]),
            ],
            readings: [
                reading(b, 0.8, 0.25),
                reading(c, -0.5, 0.5),
                reading(d, 1.1, 0.4),
                reading(e, 0.2, 0.3),
            ],
        }
    }

    fn product(factors: &[&GaussianFactor]) -> GaussianFactor {
        let mut f = factors[0].clone();
        for g in &factors[1..] {
            f = f.multiply(g).unwrap();
        }
        f
    }

    #[test]
    fn two_sweeps_reach_the_dense_posterior() {
        let ch = chain();
        let [_, b, c, d, e] = ch.v;
        // Cliques along the chain; node 1's clique is just {b}.
        let cliques = [
            Scope::singleton(b),
            Scope::new(vec![ch.v[0], b, c]),
            Scope::new(vec![c, d]),
            Scope::new(vec![d, e]),
        ];
        let seps = [Scope::singleton(b), Scope::singleton(c), Scope::singleton(d)];
        let locals = [
            ch.readings[0].clone(),
            product(&[&ch.priors[0], &ch.priors[1], &ch.readings[1]]),
            product(&[&ch.priors[2], &ch.readings[2]]),
            product(&[&ch.priors[3], &ch.readings[3]]),
        ];

        // Forward then backward sweep.
        let (m01, d01) = sp_message_payload(&locals[0], &[], &seps[0]);
        let (m12, d12) = sp_message_payload(&locals[1], std::slice::from_ref(&m01), &seps[1]);
        let (m23, _) = sp_message_payload(&locals[2], std::slice::from_ref(&m12), &seps[2]);
        let (m32, _) = sp_message_payload(&locals[3], &[], &seps[2]);
        let (m21, _) = sp_message_payload(&locals[2], std::slice::from_ref(&m32), &seps[1]);
        let (m10, _) = sp_message_payload(&locals[1], std::slice::from_ref(&m21), &seps[0]);
        assert!(!d01 && !d12);

        let dense = product(&[
            &ch.priors[0],
            &ch.priors[1],
            &ch.priors[2],
            &ch.priors[3],
            &ch.readings[0],
            &ch.readings[1],
            &ch.readings[2],
            &ch.readings[3],
        ]);

        let (b0, v0) = sp_belief_payload(&locals[0], std::slice::from_ref(&m10));
        let (b3, v3) = sp_belief_payload(&locals[3], std::slice::from_ref(&m23));
        let (b1, v1) =
            sp_belief_payload(&locals[1], &[m01.clone(), m21.clone()]);
        assert!(v0 && v1 && v3);
        assert_dist_eq(&b0, &dense.marginalize(&cliques[0]).unwrap(), 1e-8);
        assert_dist_eq(&b1, &dense.marginalize(&cliques[1]).unwrap(), 1e-8);
        assert_dist_eq(&b3, &dense.marginalize(&cliques[3]).unwrap(), 1e-8);
    }

    #[test]
    fn recomputing_a_message_is_idempotent() {
        let ch = chain();
        let sep = Scope::singleton(ch.v[2]);
        let local = product(&[&ch.priors[1], &ch.readings[1]]);
        let inbox = [ch.readings[0].clone()];
        let (m1, _) = sp_message_payload(&local, &inbox, &sep);
        let (m2, _) = sp_message_payload(&local, &inbox, &sep);
        assert_eq!(m1.precision(), m2.precision());
        assert_eq!(m1.information(), m2.information());
    }

    #[test]
    fn withholding_a_pure_evidence_branch_just_loses_that_evidence() {
        let ch = chain();
        let [_, _, c, d, e] = ch.v;
        let seps = [
            Scope::singleton(ch.v[1]),
            Scope::singleton(c),
            Scope::singleton(d),
        ];
        // Node 0 contributes only its reading; all priors live downstream.
        let locals = [
            ch.readings[0].clone(),
            product(&[&ch.priors[0], &ch.priors[1], &ch.readings[1]]),
            product(&[&ch.priors[2], &ch.readings[2]]),
            product(&[&ch.priors[3], &ch.readings[3]]),
        ];

        // Message 0->1 never arrives.
        let (m12, _) = sp_message_payload(&locals[1], &[], &seps[1]);
        let (m23, _) = sp_message_payload(&locals[2], std::slice::from_ref(&m12), &seps[2]);
        let (b3, valid) = sp_belief_payload(&locals[3], std::slice::from_ref(&m23));
        assert!(valid);

        let delivered_only = product(&[
            &ch.priors[0],
            &ch.priors[1],
            &ch.priors[2],
            &ch.priors[3],
            &ch.readings[1],
            &ch.readings[2],
            &ch.readings[3],
        ]);
        let oracle = delivered_only
            .marginalize(&Scope::new(vec![d, e]))
            .unwrap();
        assert_dist_eq(&b3, &oracle, 1e-8);
    }

    #[test]
    fn withholding_a_branch_with_prior_mass_distorts_the_belief() {
        let ch = chain();
        let [_, _, c, d, e] = ch.v;
        let seps = [
            Scope::singleton(ch.v[1]),
            Scope::singleton(c),
            Scope::singleton(d),
        ];
        // Now the a-b prior block lives on node 0 and is withheld with it.
        let locals = [
            product(&[&ch.priors[0], &ch.readings[0]]),
            product(&[&ch.priors[1], &ch.readings[1]]),
            product(&[&ch.priors[2], &ch.readings[2]]),
            product(&[&ch.priors[3], &ch.readings[3]]),
        ];
        let (m12, _) = sp_message_payload(&locals[1], &[], &seps[1]);
        let (m23, _) = sp_message_payload(&locals[2], std::slice::from_ref(&m12), &seps[2]);
        let (b3, valid) = sp_belief_payload(&locals[3], std::slice::from_ref(&m23));
        // Still a proper density; just not the right one: the lost prior
        // block is silently treated as flat.
        assert!(valid);

        let delivered_only = product(&[
            &ch.priors[0],
            &ch.priors[1],
            &ch.priors[2],
            &ch.priors[3],
            &ch.readings[1],
            &ch.readings[2],
            &ch.readings[3],
        ]);
        let oracle = delivered_only
            .marginalize(&Scope::new(vec![d, e]))
            .unwrap();
        let gap = b3.dist_param_delta(&oracle);
        assert!(gap > 1e-3, "missing prior mass went unnoticed: {gap:.3e}");
    }

    #[test]
    fn degenerate_eliminations_are_flagged_not_fatal() {
        let ch = chain();
        let [a, b, ..] = ch.v;
        // A node that knows something about a but nothing about b must
        // still produce a payload over {a} when b is in its clique.
        let local = ch.readings[0]
            .multiply(&GaussianFactor::uniform(Scope::new(vec![a, b])))
            .unwrap();
        let keep = Scope::singleton(b);
        let (payload, degenerate) = sp_message_payload(&local, &[], &keep);
        assert!(degenerate);
        assert_eq!(payload.scope(), &keep);
        assert_dist_eq(&payload, &ch.readings[0], 1e-12);

        let (_, valid) = sp_belief_payload(&local, &[]);
        assert!(!valid);
    }

    #[test]
    fn widening_covers_separator_variables_the_sender_lacks() {
        let ch = chain();
        let keep = Scope::new(vec![ch.v[0], ch.v[1]]);
        // Local only knows about b; the payload still spans {a, b}.
        let (payload, degenerate) = sp_message_payload(&ch.readings[0], &[], &keep);
        assert_eq!(payload.scope(), &keep);
        assert!(!degenerate);
        assert_eq!(payload.precision()[(0, 0)], 0.0);
        assert!(payload.precision()[(1, 1)] > 0.0);
    }

    mod layer {
        use std::collections::BTreeMap;

        use crate::model::{
            build_external_jtree, distribute, reparameterize, Allocation, EliminationOrder,
            ProbModel,
        };
        use nalgebra::{DMatrix, DVector};

        use crate::gauss::VarId;
        use crate::overlay::central_junction;
        use crate::NodeId;

        use super::super::*;
        use super::assert_dist_eq;

        fn n(i: u32) -> NodeId {
            NodeId(i)
        }

        fn scalar_prior(v: VarId, mean: f64, variance: f64) -> GaussianFactor {
            GaussianFactor::from_moments(
                Scope::singleton(v),
                DVector::from_element(1, mean),
                DMatrix::from_element(1, 1, variance),
            )
            .unwrap()
        }

        /// Same calibration shape as the robust lane's tests: three sensors
        /// on a temperature chain, one bias each.
        fn fixture() -> (ProbModel, Allocation) {
            let mut model = ProbModel::new();
            let t: Vec<VarId> = (0..3).map(|i| model.add_var(format!("t{i}"), 1)).collect();
            let b: Vec<VarId> = (0..3).map(|i| model.add_var(format!("b{i}"), 1)).collect();
            model.add_prior(scalar_prior(t[0], 0.0, 4.0));
            for w in t.windows(2) {
                model.add_prior(
                    GaussianFactor::linear_gaussian(w[1], &[(w[0], 1.0)], 0.0, 1.0).unwrap(),
                );
            }
            for &bi in &b {
                model.add_prior(scalar_prior(bi, 0.0, 1.0));
            }
            let readings = [1.3, -0.4, 0.9];
            for i in 0..3 {
                model.add_measurement(
                    format!("m{i}"),
                    n(i as u32),
                    Scope::new(vec![t[i], b[i]]),
                    vec![1.0, 1.0],
                    0.0,
                    0.25,
                    Some(readings[i]),
                );
                model.set_query(n(i as u32), Scope::new(vec![t[i], b[i]]));
            }
            let mut tree = build_external_jtree(&model, EliminationOrder::MinFill).unwrap();
            reparameterize(&mut tree, &model).unwrap();
            let nodes: Vec<NodeId> = (0..3).map(n).collect();
            let alloc = distribute(&tree, &model, &nodes, 1).unwrap();
            (model, alloc)
        }

        fn wire_path(model: &ProbModel, alloc: &Allocation) -> Vec<SumprodLayer> {
            let edges = vec![(n(0), n(1)), (n(1), n(2))];
            let vars: BTreeMap<NodeId, Scope> = alloc
                .per_node
                .iter()
                .map(|(&i, a)| (i, a.local_vars.clone()))
                .collect();
            let cj = central_junction(&edges, &vars);
            (0..3)
                .map(|i| {
                    let mut layer = SumprodLayer::from_allocation(model, alloc, n(i)).unwrap();
                    let mut seps = BTreeMap::new();
                    for (&(a, b), s) in &cj.separators {
                        if a == n(i) {
                            seps.insert(b, s.clone());
                        }
                    }
                    layer.set_separators(seps);
                    layer
                })
                .collect()
        }

        fn pump(layers: &mut [SumprodLayer]) {
            for _ in 0..20 {
                let mut mail = Vec::new();
                for (i, layer) in layers.iter_mut().enumerate() {
                    for (to, payload) in layer.drain_outgoing() {
                        mail.push((n(i as u32), to, payload));
                    }
                }
                if mail.is_empty() {
                    return;
                }
                for (from, to, payload) in mail {
                    layers[to.0 as usize].receive(from, payload);
                }
            }
            panic!("message exchange did not quiesce");
        }

        fn oracle(model: &ProbModel, query: &Scope) -> GaussianFactor {
            let mut joint = model.joint_prior().unwrap();
            for m in model.measurements() {
                joint = joint.multiply(&m.likelihood().unwrap().unwrap()).unwrap();
            }
            joint.marginalize(query).unwrap().normalized().unwrap()
        }

        #[test]
        fn converged_exchange_reaches_the_global_posterior() {
            let (model, alloc) = fixture();
            let mut layers = wire_path(&model, &alloc);
            pump(&mut layers);
            for (i, layer) in layers.iter().enumerate() {
                let belief = layer.belief();
                assert!(belief.valid, "node {i}: converged belief must be proper");
                assert_dist_eq(&belief.payload, &oracle(&model, layer.query()), 1e-8);
            }
        }

        #[test]
        fn every_prior_factor_lands_on_exactly_one_node() {
            let (model, alloc) = fixture();
            // The layers' locals multiplied together, restricted to the
            // environment scope, must reproduce the joint prior exactly.
            let mut prod = GaussianFactor::uniform(Scope::empty());
            for i in 0..3 {
                let layer = SumprodLayer::from_allocation(&model, &alloc, n(i)).unwrap();
                prod = prod.multiply(layer.local_factor()).unwrap();
            }
            let mut with_lik = model.joint_prior().unwrap();
            for m in model.measurements() {
                with_lik = with_lik.multiply(&m.likelihood().unwrap().unwrap()).unwrap();
            }
            assert_dist_eq(&prod, &with_lik, 1e-12);
        }

        #[test]
        fn quiescent_until_invalidated() {
            let (model, alloc) = fixture();
            let mut layers = wire_path(&model, &alloc);
            pump(&mut layers);
            for layer in layers.iter_mut() {
                assert!(layer.drain_outgoing().is_empty());
            }
            layers[1].invalidate(n(0));
            let out = layers[1].drain_outgoing();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].0, n(0));
        }

        #[test]
        fn separator_change_forces_a_resend() {
            let (model, alloc) = fixture();
            let mut layers = wire_path(&model, &alloc);
            pump(&mut layers);
            let mut seps: BTreeMap<NodeId, Scope> = layers[0].seps.clone();
            let widened = seps[&n(1)].union(&alloc.node(n(0)).query);
            seps.insert(n(1), widened);
            layers[0].set_separators(seps);
            let out = layers[0].drain_outgoing();
            assert_eq!(out.len(), 1, "only the changed edge resends");
            assert_eq!(out[0].0, n(1));
        }

        #[test]
        fn isolated_node_reports_an_invalid_belief() {
            let (model, _) = fixture();
            // A node holding only its measurement likelihood has no prior
            // mass over the query; with no messages the belief cannot be a
            // proper density.
            let meas = &model.measurements()[2];
            let query = meas.parents.clone();
            let local = GaussianFactor::uniform(query.clone())
                .multiply(&meas.likelihood().unwrap().unwrap())
                .unwrap();
            let layer = SumprodLayer::new(n(2), query, local);
            let belief = layer.belief();
            assert!(!belief.valid);
            assert_eq!(belief.payload.scope(), layer.query());
        }

        #[test]
        fn payload_wire_size_tracks_the_separator_dimension() {
            let f = GaussianFactor::uniform(Scope::new(vec![
                VarId::scalar(0),
                VarId::scalar(1),
            ]));
            assert_eq!(f.wire_bytes(), sumprod_payload_bytes(f.scope()));
            assert_eq!(f.wire_bytes(), 16 + 8 * (2 + 3));
        }
    }
}
