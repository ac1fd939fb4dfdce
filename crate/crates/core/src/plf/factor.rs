//! Paired prior/likelihood factors.
//!
//! A [`PlFactor`] keeps a proper prior density over its scope separate from
//! the (possibly improper) likelihood of the measurements folded into it.
//! Keeping the two apart is what makes partial information safe to use: the
//! prior part is always a valid density, so any belief read out of these
//! factors is a valid density too, no matter how incomplete the evidence.
//!
//! Structurally, likelihood precision matrices stay positive semidefinite
//! through every operation here: raw measurement likelihoods are rank-one
//! updates, products preserve semidefiniteness, and a summary's likelihood is
//! the ratio of two marginals whose precisions are ordered. Priors therefore
//! stay proper under [`pl_combine`] and [`pl_summary`], which is the formal
//! backbone of the "no invalid beliefs" guarantee upheld by the robust
//! inference layer.

use std::collections::BTreeSet;

use crate::gauss::{GaussError, GaussianFactor, Scope};
use crate::MeasId;

/// Why a prior/likelihood operation failed.
#[derive(Debug, thiserror::Error)]
pub enum PlfError {
    /// Two factors claiming the same measurement may not be combined; the
    /// evidence would be counted twice.
    #[error("factors share evidence {0:?}")]
    EvidenceOverlap(Vec<MeasId>),
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),
    #[error("operation needs a non-empty fragment")]
    EmptyFragment,
    #[error(transparent)]
    Gauss(#[from] GaussError),
}

/// A prior density paired with the likelihood of the evidence folded into it.
///
/// Invariants: the prior is a proper (normalizable) density over the factor's
/// scope, the likelihood's scope is contained in it, and `evidence` names
/// exactly the measurements the likelihood accounts for.
#[derive(Clone, Debug)]
pub struct PlFactor {
    prior: GaussianFactor,
    likelihood: GaussianFactor,
    evidence: BTreeSet<MeasId>,
}

impl PlFactor {
    /// Wrap a standalone prior density; the likelihood starts uniform.
    pub fn from_prior(prior: GaussianFactor) -> Self {
        debug_assert!(prior.is_normalizable(), "prior part must be proper");
        PlFactor {
            prior,
            likelihood: GaussianFactor::uniform(Scope::empty()),
            evidence: BTreeSet::new(),
        }
    }

    /// Pair one observed measurement with the prior over its inputs.
    ///
    /// `meas_model` is the joint factor over the measurement variable and its
    /// inputs; conditioning it on the observed value leaves the likelihood
    /// over the inputs. `parent_prior` must be a density over exactly those
    /// inputs.
    pub fn instantiate(
        meas_model: &GaussianFactor,
        meas_var: crate::gauss::VarId,
        meas_id: MeasId,
        observation: f64,
        parent_prior: GaussianFactor,
    ) -> Result<Self, PlfError> {
        let parents = meas_model.scope().difference(&Scope::singleton(meas_var));
        if parent_prior.scope() != &parents {
            return Err(PlfError::ScopeMismatch(format!(
                "prior over {} does not cover measurement inputs {}",
                parent_prior.scope(),
                parents
            )));
        }
        let mut at = crate::gauss::Assignment::new();
        at.set_scalar(meas_var, observation);
        let likelihood = meas_model.condition(&at)?;
        Ok(PlFactor {
            prior: parent_prior,
            likelihood,
            evidence: std::iter::once(meas_id).collect(),
        })
    }

    pub fn scope(&self) -> &Scope {
        self.prior.scope()
    }

    pub fn prior(&self) -> &GaussianFactor {
        &self.prior
    }

    pub fn likelihood(&self) -> &GaussianFactor {
        &self.likelihood
    }

    pub fn evidence(&self) -> &BTreeSet<MeasId> {
        &self.evidence
    }

    /// The factor's belief: prior times likelihood, over the full scope.
    pub fn posterior(&self) -> Result<GaussianFactor, PlfError> {
        Ok(self.prior.multiply(&self.likelihood)?)
    }

    /// Ordering key: scope first, then evidence. Parameter values do not
    /// participate, so ordering is stable as estimates are refined.
    pub fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        self.scope()
            .vars()
            .cmp(other.scope().vars())
            .then_with(|| self.evidence.cmp(&other.evidence))
    }

    /// True when the factors are interchangeable replicas: same scope, same
    /// evidence, parameters within `tol`.
    pub fn is_replica_of(&self, other: &Self, tol: f64) -> bool {
        self.scope() == other.scope()
            && self.evidence == other.evidence
            && self.prior.dist_param_delta(&other.prior) <= tol
            && self.likelihood.scope() == other.likelihood.scope()
            && self.likelihood.dist_param_delta(&other.likelihood) <= tol
    }

    /// Largest parameter difference against `other`, infinite on any scope or
    /// evidence mismatch. Drives change detection for retransmission.
    pub fn param_delta(&self, other: &Self) -> f64 {
        if self.evidence != other.evidence || self.likelihood.scope() != other.likelihood.scope() {
            return f64::INFINITY;
        }
        self.prior
            .dist_param_delta(&other.prior)
            .max(self.likelihood.dist_param_delta(&other.likelihood))
    }
}

/// Marginalize, falling back to a generalized (pseudoinverse) marginal when
/// the eliminated block is numerically indefinite. The fallback keeps the
/// system live under transient inconsistency; exact states never take it.
pub(crate) fn marginal_lenient(
    f: &GaussianFactor,
    keep: &Scope,
) -> Result<GaussianFactor, GaussError> {
    match f.marginalize(keep) {
        Ok(m) => Ok(m),
        Err(_) => {
            let (m, exact) = f.marginalize_generalized(keep)?;
            if !exact {
                log::debug!(
                    "generalized marginal used for {} -> {}; transient inconsistency",
                    f.scope(),
                    keep
                );
            }
            Ok(m)
        }
    }
}

/// Merge two factors over possibly overlapping scopes.
///
/// Priors multiply and the double-counted overlap is divided back out using
/// the marginal of the smaller-scoped factor's prior (ties favor the first
/// argument). When one scope contains the other, the division cancels that
/// side's prior exactly, so the larger prior passes through bit for bit and
/// only likelihood and evidence are transferred. Likelihoods always multiply.
///
/// Fails if the factors claim overlapping evidence.
pub fn pl_combine(a: &PlFactor, b: &PlFactor) -> Result<PlFactor, PlfError> {
    let shared: Vec<MeasId> = a.evidence.intersection(&b.evidence).copied().collect();
    if !shared.is_empty() {
        return Err(PlfError::EvidenceOverlap(shared));
    }
    let inter = a.scope().intersection(b.scope());
    let (div_src, other) = if a.scope().len() <= b.scope().len() {
        (a, b)
    } else {
        (b, a)
    };
    let prior = if inter == *div_src.scope() {
        // The divisor would be the whole of `div_src`'s prior; multiplying
        // and dividing it back would only add rounding noise.
        other.prior.clone()
    } else {
        let div = marginal_lenient(&div_src.prior, &inter)?;
        a.prior.multiply(&b.prior)?.divide(&div)?
    };
    let likelihood = a.likelihood.multiply(&b.likelihood)?;
    let evidence = a.evidence.union(&b.evidence).copied().collect();
    Ok(PlFactor {
        prior,
        likelihood,
        evidence,
    })
}

/// Restrict a factor to `keep`, preserving what the evidence says about the
/// kept variables.
///
/// The prior is marginalized directly; the likelihood becomes the ratio of
/// the marginalized posterior to the marginalized prior, which is exactly the
/// likelihood of the factor's evidence as a function of the kept variables.
pub fn pl_summary(f: &PlFactor, keep: &Scope) -> Result<PlFactor, PlfError> {
    if !keep.is_subset_of(f.scope()) {
        return Err(PlfError::ScopeMismatch(format!(
            "cannot keep {} from {}",
            keep,
            f.scope()
        )));
    }
    if keep == f.scope() {
        return Ok(f.clone());
    }
    let prior = marginal_lenient(&f.prior, keep)?;
    let likelihood = if is_constant(&f.likelihood) {
        // A constant carries no shape; collapse it to an empty scope so the
        // summary's likelihood stays inside `keep`.
        GaussianFactor::from_information(
            Scope::empty(),
            nalgebra::DMatrix::zeros(0, 0),
            nalgebra::DVector::zeros(0),
            f.likelihood.log_scale(),
        )?
    } else {
        let post = marginal_lenient(&f.posterior()?, keep)?;
        post.divide(&prior)?
    };
    Ok(PlFactor {
        prior,
        likelihood,
        evidence: f.evidence.clone(),
    })
}

fn is_constant(f: &GaussianFactor) -> bool {
    f.scope().is_empty() || (f.precision().iter().all(|v| *v == 0.0) && f.information().iter().all(|v| *v == 0.0))
}
