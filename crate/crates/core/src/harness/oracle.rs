//! Centralized dense oracles and the error metric.
//!
//! Reference answers are computed with plain matrix algebra over the full
//! joint, never through the distributed code paths they are used to judge.

use std::collections::BTreeSet;

use crate::gauss::GaussianFactor;
use crate::model::{ExternalJunctionTree, ProbModel};
use crate::MeasId;

use super::{CalibrationModel, HarnessError};

/// Dense joint posterior: the full prior times the likelihoods of the
/// given measurements. Not normalized.
pub fn joint_posterior(
    model: &ProbModel,
    meas: &[MeasId],
) -> Result<GaussianFactor, HarnessError> {
    let mut joint = model.joint_prior()?;
    for &id in meas {
        let lik = model
            .measurement(id)
            .likelihood()?
            .ok_or_else(|| HarnessError::Invalid(format!("measurement {id} has no observed value")))?;
        joint = joint.multiply(&lik)?;
    }
    Ok(joint)
}

/// Posterior mean of every bias given a measurement subset.
pub fn bias_means(cal: &CalibrationModel, meas: &[MeasId]) -> Result<Vec<f64>, HarnessError> {
    let joint = joint_posterior(&cal.model, meas)?;
    let (mean, _) = joint.moment_stats()?;
    let scope = joint.scope();
    Ok(cal
        .bias_vars
        .iter()
        .map(|&b| mean[scope.offset_of(b).expect("bias variable in joint scope")])
        .collect())
}

/// Root mean squared error over the nodes that produced an estimate.
/// NaN when no node did; invalid-belief nodes are the caller's to count.
pub fn rms(est: &[Option<f64>], truth: &[f64]) -> f64 {
    assert_eq!(est.len(), truth.len(), "estimate and truth node sets differ");
    let mut se = 0.0;
    let mut k = 0usize;
    for (e, t) in est.iter().zip(truth) {
        if let Some(v) = e {
            se += (v - t) * (v - t);
            k += 1;
        }
    }
    if k == 0 {
        f64::NAN
    } else {
        (se / k as f64).sqrt()
    }
}

/// Posterior of the model defined by a subset of the tree's clique
/// marginals plus a subset of the measurements: the product of the
/// marginals, divided along a maximum-weight forest (weight = shared
/// variable count) by the shared-variable marginals, times the
/// likelihoods. When the subset induces a connected subtree this is the
/// exact posterior restricted to those cliques; when it does not, it is
/// the posterior under the extra independencies the gaps introduce, which
/// is precisely what a network segment holding these fragments believes.
pub fn fragment_posterior(
    tree: &ExternalJunctionTree,
    cliques: &BTreeSet<usize>,
    model: &ProbModel,
    meas: &[MeasId],
) -> Result<GaussianFactor, HarnessError> {
    let ids: Vec<usize> = cliques.iter().copied().collect();
    if ids.is_empty() {
        return Err(HarnessError::Invalid("empty clique subset".into()));
    }
    let marginal = |c: usize| {
        tree.marginal(c).ok_or_else(|| {
            HarnessError::Invalid("junction tree carries no marginals; reparameterize first".into())
        })
    };

    // Kruskal over the subset, heaviest shared-variable sets first, ties by
    // index pair so the construction is deterministic.
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let w = tree.cliques[ids[i]].intersection(&tree.cliques[ids[j]]).len();
            if w > 0 {
                pairs.push((w, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut joint = marginal(ids[0])?.clone();
    for &c in &ids[1..] {
        joint = joint.multiply(marginal(c)?)?;
    }
    for (_, i, j) in pairs {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri == rj {
            continue;
        }
        parent[ri] = rj;
        let shared = tree.cliques[ids[i]].intersection(&tree.cliques[ids[j]]);
        let sep_marginal = marginal(ids[i])?.marginalize(&shared)?;
        joint = joint.divide(&sep_marginal)?;
    }

    for &id in meas {
        let lik = model
            .measurement(id)
            .likelihood()?
            .ok_or_else(|| HarnessError::Invalid(format!("measurement {id} has no observed value")))?;
        joint = joint.multiply(&lik)?;
    }
    Ok(joint)
}
