//! Probabilistic models and their preparation for distribution.
//!
//! A [`ProbModel`] is a factored Gaussian prior over environment variables
//! plus a set of linear-Gaussian measurements, each owned by a network node.
//! [`build_external_jtree`] compiles the prior into a junction tree,
//! [`reparameterize`] turns the tree's potentials into exact clique
//! marginals (so the prior becomes a product of marginals divided by
//! separator marginals), and [`distribute`] hands replicated clique
//! marginals to nodes so that each node's local priors cover its query and
//! measurement-parent variables.
//!
//! Models round-trip losslessly through a line-oriented text format, see
//! [`parse_model`] and [`print_model`].

mod distribute;
mod jtree;
mod textfmt;

pub use distribute::{distribute, Allocation, NodeAllocation};
pub use jtree::{build_external_jtree, reparameterize, EliminationOrder, ExternalJunctionTree, JtEdge};
pub use textfmt::{parse_model, print_model};

use std::collections::BTreeMap;

use crate::gauss::{Assignment, GaussError, GaussianFactor, Scope, VarId};
use crate::{MeasId, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gauss(#[from] GaussError),
}

/// A declared environment variable.
#[derive(Clone, Debug, PartialEq)]
pub struct VarDecl {
    pub var: VarId,
    pub name: String,
}

/// A linear-Gaussian measurement: `value = coeffs . parents + offset + noise`.
///
/// The coefficient order matches the sorted order of the parent scope. The
/// measured value gets its own variable id so the conditional density can be
/// expressed as an ordinary factor over `{var} ∪ parents`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub id: MeasId,
    pub name: String,
    pub var: VarId,
    pub owner: NodeId,
    pub parents: Scope,
    pub coeffs: Vec<f64>,
    pub offset: f64,
    pub noise_var: f64,
    pub observed: Option<f64>,
}

impl Measurement {
    /// The conditional density of the measured value given its parents.
    pub fn model_factor(&self) -> Result<GaussianFactor, GaussError> {
        let parents: Vec<(VarId, f64)> = self
            .parents
            .iter()
            .zip(self.coeffs.iter().copied())
            .collect();
        GaussianFactor::linear_gaussian(self.var, &parents, self.offset, self.noise_var)
    }

    /// The likelihood over the parents after conditioning on the observed
    /// value. `None` when no observation has been recorded.
    pub fn likelihood(&self) -> Result<Option<GaussianFactor>, GaussError> {
        let Some(obs) = self.observed else {
            return Ok(None);
        };
        let mut ev = Assignment::new();
        ev.set_scalar(self.var, obs);
        Ok(Some(self.model_factor()?.condition(&ev)?))
    }
}

/// A factored Gaussian prior over environment variables together with
/// measurements and per-node query variable sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbModel {
    vars: Vec<VarDecl>,
    priors: Vec<GaussianFactor>,
    measurements: Vec<Measurement>,
    queries: BTreeMap<NodeId, Scope>,
    next_var_id: u32,
}

impl ProbModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, dim: u16) -> VarId {
        let var = VarId::new(self.next_var_id, dim);
        self.next_var_id += 1;
        self.vars.push(VarDecl {
            var,
            name: name.into(),
        });
        var
    }

    pub fn add_prior(&mut self, factor: GaussianFactor) {
        self.priors.push(factor);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add_measurement(
        &mut self,
        name: impl Into<String>,
        owner: NodeId,
        parents: Scope,
        coeffs: Vec<f64>,
        offset: f64,
        noise_var: f64,
        observed: Option<f64>,
    ) -> MeasId {
        let id = MeasId(self.measurements.len() as u32);
        let var = VarId::scalar(self.next_var_id);
        self.next_var_id += 1;
        self.measurements.push(Measurement {
            id,
            name: name.into(),
            var,
            owner,
            parents,
            coeffs,
            offset,
            noise_var,
            observed,
        });
        id
    }

    pub fn set_query(&mut self, node: NodeId, scope: Scope) {
        self.queries.insert(node, scope);
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn priors(&self) -> &[GaussianFactor] {
        &self.priors
    }

    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn measurement(&self, id: MeasId) -> &Measurement {
        &self.measurements[id.0 as usize]
    }

    pub fn queries(&self) -> &BTreeMap<NodeId, Scope> {
        &self.queries
    }

    pub fn query_for(&self, node: NodeId) -> Scope {
        self.queries.get(&node).cloned().unwrap_or_default()
    }

    /// All environment variables as a scope.
    pub fn env_scope(&self) -> Scope {
        self.vars.iter().map(|d| d.var).collect()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars.iter().find(|d| d.name == name).map(|d| d.var)
    }

    pub fn var_name(&self, var: VarId) -> &str {
        self.vars
            .iter()
            .find(|d| d.var == var)
            .map(|d| d.name.as_str())
            .unwrap_or("?")
    }

    /// The unnormalized joint prior as a single information-form factor.
    pub fn joint_prior(&self) -> Result<GaussianFactor, GaussError> {
        let mut joint = GaussianFactor::uniform(self.env_scope());
        for p in &self.priors {
            joint = joint.multiply(p)?;
        }
        Ok(joint)
    }

    /// Structural and numeric sanity checks: known parents, positive noise,
    /// nonempty parent sets, queries over declared variables, and a
    /// normalizable joint prior.
    pub fn validate(&self) -> Result<(), ModelError> {
        let env = self.env_scope();
        for p in &self.priors {
            if !p.scope().is_subset_of(&env) {
                return Err(ModelError::Invalid(
                    "prior factor over undeclared variables".into(),
                ));
            }
        }
        for m in &self.measurements {
            if m.parents.is_empty() {
                return Err(ModelError::Invalid(format!(
                    "measurement {} has no parents",
                    m.name
                )));
            }
            if !m.parents.is_subset_of(&env) {
                return Err(ModelError::Invalid(format!(
                    "measurement {} has undeclared parents",
                    m.name
                )));
            }
            if m.coeffs.len() != m.parents.len() {
                return Err(ModelError::Invalid(format!(
                    "measurement {} coefficient count mismatch",
                    m.name
                )));
            }
            if !(m.noise_var > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "measurement {} has non-positive noise variance",
                    m.name
                )));
            }
            if let Some(o) = m.observed {
                if !o.is_finite() {
                    return Err(ModelError::Invalid(format!(
                        "measurement {} has a non-finite observation",
                        m.name
                    )));
                }
            }
        }
        for (node, q) in &self.queries {
            if !q.is_subset_of(&env) {
                return Err(ModelError::Invalid(format!(
                    "query for {node} names undeclared variables"
                )));
            }
        }
        if !self.joint_prior()?.is_normalizable() {
            return Err(ModelError::Invalid(
                "joint prior is not a proper density".into(),
            ));
        }
        Ok(())
    }
}
