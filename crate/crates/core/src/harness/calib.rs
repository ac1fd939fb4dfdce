//! Synthetic sensor calibration models.
//!
//! Each node carries a latent temperature `t_i` and a latent sensor bias
//! `b_i`, and observes one reading `m_i = t_i + b_i + noise`. Temperatures
//! are coupled along a Markov graph so that neighboring nodes nearly agree;
//! biases are independent a priori. Calibration works exactly because the
//! temperature field is correlated and the biases are not: differences of
//! readings at coupled nodes expose differences of biases. A common
//! bias-plus-temperature mode stays unobservable, which is why weak
//! anchors on the temperatures keep the joint proper without pretending to
//! resolve it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::gauss::{GaussianFactor, Scope, VarId};
use crate::model::ProbModel;
use crate::{MeasId, NodeId};

use super::HarnessError;

/// Shape of the temperature Markov graph and of the node layout.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphSpec {
    /// Nodes on a line, couplings between consecutive nodes.
    Chain,
    /// Nodes on a grid with the given number of columns, couplings between
    /// lattice neighbors.
    Grid { cols: usize },
    /// Nodes placed uniformly at random in the unit square, couplings
    /// between all pairs closer than `radius`.
    Geometric { radius: f64 },
}

/// Variances of the model blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibParams {
    /// Variance of the weak per-temperature anchor prior.
    pub anchor_var: f64,
    /// Variance of the difference of coupled temperatures.
    pub coupling_var: f64,
    /// Variance of the i.i.d. bias priors.
    pub bias_var: f64,
    /// Variance of the measurement noise.
    pub noise_var: f64,
}

impl Default for CalibParams {
    fn default() -> Self {
        CalibParams {
            anchor_var: 100.0,
            coupling_var: 0.5,
            bias_var: 1.0,
            noise_var: 0.0625,
        }
    }
}

/// A generated calibration instance: the probabilistic model plus the
/// sampled ground truth it was generated from.
#[derive(Clone, Debug)]
pub struct CalibrationModel {
    pub model: ProbModel,
    pub coords: Vec<(f64, f64)>,
    /// Temperature Markov graph, node index pairs with a < b.
    pub temp_edges: Vec<(usize, usize)>,
    pub temp_vars: Vec<VarId>,
    pub bias_vars: Vec<VarId>,
    pub meas_ids: Vec<MeasId>,
    pub true_temp: Vec<f64>,
    pub true_bias: Vec<f64>,
    pub readings: Vec<f64>,
}

impl CalibrationModel {
    pub fn n_nodes(&self) -> usize {
        self.temp_vars.len()
    }
}

fn layout(n: usize, spec: &GraphSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    match spec {
        GraphSpec::Chain => (0..n).map(|i| (i as f64, 0.0)).collect(),
        GraphSpec::Grid { cols } => (0..n)
            .map(|i| ((i % cols) as f64, (i / cols) as f64))
            .collect(),
        GraphSpec::Geometric { .. } => (0..n)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect(),
    }
}

fn edges(n: usize, spec: &GraphSpec, coords: &[(f64, f64)]) -> Vec<(usize, usize)> {
    match spec {
        GraphSpec::Chain => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        GraphSpec::Grid { cols } => {
            let mut e = Vec::new();
            for i in 0..n {
                if (i + 1) % cols != 0 && i + 1 < n {
                    e.push((i, i + 1));
                }
                if i + cols < n {
                    e.push((i, i + cols));
                }
            }
            e
        }
        GraphSpec::Geometric { radius } => {
            let mut e = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if distance(coords[i], coords[j]) <= *radius {
                        e.push((i, j));
                    }
                }
            }
            e
        }
    }
}

pub(super) fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parts = n;
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            parts -= 1;
        }
    }
    parts == 1
}

/// A pairwise factor penalizing the difference of two scalar variables:
/// zero-mean Gaussian on `a - b` with the given variance. Improper alone;
/// the anchors make the joint proper.
fn coupling_factor(a: VarId, b: VarId, variance: f64) -> GaussianFactor {
    let j = 1.0 / variance;
    GaussianFactor::from_information(
        Scope::new(vec![a, b]),
        DMatrix::from_row_slice(2, 2, &[j, -j, -j, j]),
        DVector::zeros(2),
        0.0,
    )
    .expect("two scalars, two-by-two precision")
}

fn scalar_prior(v: VarId, variance: f64) -> GaussianFactor {
    GaussianFactor::from_moments(
        Scope::singleton(v),
        DVector::zeros(1),
        DMatrix::from_element(1, 1, variance),
    )
    .expect("positive variance")
}

/// Generate a calibration instance: the model, the sampled latent truth,
/// and the biased readings, all driven by one seeded generator.
///
/// The geometric graph spec is rejected with an error when the sampled
/// layout is disconnected; pick a larger radius or another seed.
pub fn gen_calibration(
    n: usize,
    spec: &GraphSpec,
    params: &CalibParams,
    seed: u64,
) -> Result<CalibrationModel, HarnessError> {
    if n < 2 {
        return Err(HarnessError::Invalid("need at least two nodes".into()));
    }
    if let GraphSpec::Grid { cols } = spec {
        if *cols == 0 {
            return Err(HarnessError::Invalid("grid needs at least one column".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = layout(n, spec, &mut rng);
    let temp_edges = edges(n, spec, &coords);
    if !connected(n, &temp_edges) {
        return Err(HarnessError::Invalid(
            "temperature graph is disconnected; widen the radius".into(),
        ));
    }

    let mut model = ProbModel::new();
    let temp_vars: Vec<VarId> = (0..n).map(|i| model.add_var(format!("t{i}"), 1)).collect();
    let bias_vars: Vec<VarId> = (0..n).map(|i| model.add_var(format!("b{i}"), 1)).collect();
    for &t in &temp_vars {
        model.add_prior(scalar_prior(t, params.anchor_var));
    }
    for &(a, b) in &temp_edges {
        model.add_prior(coupling_factor(temp_vars[a], temp_vars[b], params.coupling_var));
    }
    // A zero bias variance (the "perfectly calibrated" control) is modeled
    // as a tiny positive variance so the joint stays well defined.
    let bias_var = params.bias_var.max(1e-9);
    for &b in &bias_vars {
        model.add_prior(scalar_prior(b, bias_var));
    }

    // Sample the latent truth from the prior: x = mean + chol(cov) z.
    let joint = model.joint_prior()?;
    let (mean, cov) = joint.moment_stats()?;
    let chol = nalgebra::Cholesky::new(cov)
        .ok_or_else(|| HarnessError::Invalid("prior covariance not positive definite".into()))?;
    let z = DVector::from_iterator(2 * n, (0..2 * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let x = mean + chol.l() * z;
    let scope = joint.scope().clone();
    let true_temp: Vec<f64> = temp_vars
        .iter()
        .map(|&t| x[scope.offset_of(t).expect("temperature in joint scope")])
        .collect();
    let true_bias: Vec<f64> = bias_vars
        .iter()
        .map(|&b| x[scope.offset_of(b).expect("bias in joint scope")])
        .collect();
    let readings: Vec<f64> = (0..n)
        .map(|i| true_temp[i] + true_bias[i] + params.noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut meas_ids = Vec::with_capacity(n);
    for i in 0..n {
        let parents = Scope::new(vec![temp_vars[i], bias_vars[i]]);
        meas_ids.push(model.add_measurement(
            format!("m{i}"),
            NodeId(i as u32),
            parents.clone(),
            vec![1.0, 1.0],
            0.0,
            params.noise_var,
            Some(readings[i]),
        ));
        model.set_query(NodeId(i as u32), parents);
    }

    Ok(CalibrationModel {
        model,
        coords,
        temp_edges,
        temp_vars,
        bias_vars,
        meas_ids,
        true_temp,
        true_bias,
        readings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_chain_has_six_variables_and_one_coupling() {
        let cal = gen_calibration(2, &GraphSpec::Chain, &CalibParams::default(), 1).unwrap();
        let env_vars = cal.model.vars().len();
        let meas_vars = cal.model.measurements().len();
        assert_eq!(env_vars + meas_vars, 6);
        assert_eq!(cal.temp_edges, vec![(0, 1)]);
        let couplings = cal
            .model
            .priors()
            .iter()
            .filter(|p| p.scope().len() == 2)
            .count();
        assert_eq!(couplings, 1);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = gen_calibration(6, &GraphSpec::Geometric { radius: 0.9 }, &CalibParams::default(), 7)
            .unwrap();
        let b = gen_calibration(6, &GraphSpec::Geometric { radius: 0.9 }, &CalibParams::default(), 7)
            .unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.readings, b.readings);
        let c = gen_calibration(6, &GraphSpec::Geometric { radius: 0.9 }, &CalibParams::default(), 8)
            .unwrap();
        assert_ne!(a.readings, c.readings);
    }

    #[test]
    fn tiny_radius_is_rejected_as_disconnected() {
        let err = gen_calibration(8, &GraphSpec::Geometric { radius: 1e-6 }, &CalibParams::default(), 3);
        assert!(err.is_err());
    }

    #[test]
    fn grid_edges_are_lattice_neighbors() {
        let cal = gen_calibration(6, &GraphSpec::Grid { cols: 3 }, &CalibParams::default(), 1).unwrap();
        // 2x3 grid: 4 horizontal, 3 vertical.
        assert_eq!(cal.temp_edges.len(), 7);
        assert!(cal.temp_edges.contains(&(0, 3)));
        assert!(cal.temp_edges.contains(&(1, 2)));
        assert!(!cal.temp_edges.contains(&(2, 3)));
    }

    #[test]
    fn zero_bias_variance_pins_posterior_biases_near_zero() {
        let params = CalibParams { bias_var: 0.0, ..CalibParams::default() };
        let cal = gen_calibration(4, &GraphSpec::Chain, &params, 9).unwrap();
        let est = super::super::bias_means(&cal, &cal.meas_ids).unwrap();
        for (i, e) in est.iter().enumerate() {
            assert!(e.abs() < 1e-3, "bias {i} posterior mean {e} not near zero");
        }
        for b in &cal.true_bias {
            assert!(b.abs() < 1e-3);
        }
    }

    #[test]
    fn sampled_readings_match_model_moments() {
        // Monte Carlo over seeds: the empirical mean and variance of each
        // reading must match the model's implied moments within 3 sigma.
        let n = 3;
        let params = CalibParams::default();
        let seeds = 1000u64;
        let mut sums = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for seed in 0..seeds {
            let cal = gen_calibration(n, &GraphSpec::Chain, &params, seed).unwrap();
            for i in 0..n {
                sums[i] += cal.readings[i];
                sq[i] += cal.readings[i] * cal.readings[i];
            }
        }
        let cal = gen_calibration(n, &GraphSpec::Chain, &params, 0).unwrap();
        let joint = cal.model.joint_prior().unwrap();
        let (_, cov) = joint.moment_stats().unwrap();
        let scope = joint.scope().clone();
        for i in 0..n {
            let ti = scope.offset_of(cal.temp_vars[i]).unwrap();
            let bi = scope.offset_of(cal.bias_vars[i]).unwrap();
            // m = t + b + noise, t and b independent a priori.
            let var_m = cov[(ti, ti)] + cov[(bi, bi)] + 2.0 * cov[(ti, bi)] + params.noise_var;
            let mean = sums[i] / seeds as f64;
            let var = sq[i] / seeds as f64 - mean * mean;
            let mean_tol = 3.0 * (var_m / seeds as f64).sqrt();
            assert!(
                mean.abs() < mean_tol,
                "reading {i}: empirical mean {mean} exceeds {mean_tol}"
            );
            let var_tol = 3.0 * var_m * (2.0 / (seeds as f64 - 1.0)).sqrt();
            assert!(
                (var - var_m).abs() < var_tol,
                "reading {i}: empirical variance {var} vs model {var_m} exceeds {var_tol}"
            );
        }
    }
}
