//! Drive a scenario end to end and record per-second metrics.
//!
//! Each run generates a calibration model from the scenario seed, plans the
//! distribution, builds one overlay node per sensor, and steps the network
//! simulator one simulated second at a time. At every tick the harness
//! grades the live nodes against oracles that see the whole problem: the
//! posterior given every measurement reachable from each node, and the
//! posterior a node could reach alone. Runs are deterministic functions of
//! the scenario, so a trace can be reproduced byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::gauss::{GaussianFactor, Scope};
use crate::model::{build_external_jtree, distribute, reparameterize, Allocation, EliminationOrder};
use crate::netsim::{LinkModel, Sim, SimConfig};
use crate::overlay::{InferenceLayer, OverlayNode};
use crate::robust::RobustLayer;
use crate::sumprod::SumprodLayer;
use crate::{MeasId, NodeId};

use super::calib::{gen_calibration, CalibrationModel};
use super::checks::snapshot;
use super::oracle::{bias_means, rms};
use super::scenario::Scenario;
use super::HarnessError;

/// Which inference layer rides on the overlay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lane {
    Robust,
    Sumprod,
}

/// Anything that can report a belief over its query variables along with
/// whether that belief is a proper density right now.
pub trait QueryBelief {
    fn query_belief(&self) -> (GaussianFactor, bool);
}

impl QueryBelief for RobustLayer {
    fn query_belief(&self) -> (GaussianFactor, bool) {
        let b = self.belief();
        (b.payload, b.valid)
    }
}

impl QueryBelief for SumprodLayer {
    fn query_belief(&self) -> (GaussianFactor, bool) {
        let b = self.belief();
        (b.payload, b.valid)
    }
}

/// One line of the trace, sampled at a whole simulated second.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub time: f64,
    pub spanning_tree_valid: bool,
    pub rip_valid: bool,
    pub rms_robust: f64,
    pub rms_sumprod: f64,
    pub rms_global_oracle: f64,
    pub rms_local_oracle: f64,
    pub invalid_belief_count: usize,
    pub tree_cost: f64,
    pub bytes_sent_total: u64,
}

/// The whole trace of a run.
#[derive(Clone, Debug, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "time,spanning_tree_valid,rip_valid,rms_robust,rms_sumprod,\
             rms_global_oracle,rms_local_oracle,invalid_belief_count,\
             tree_cost,bytes_sent_total\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f(r.time),
                r.spanning_tree_valid as u8,
                r.rip_valid as u8,
                fmt_f(r.rms_robust),
                fmt_f(r.rms_sumprod),
                fmt_f(r.rms_global_oracle),
                fmt_f(r.rms_local_oracle),
                r.invalid_belief_count,
                fmt_f(r.tree_cost),
                r.bytes_sent_total,
            );
        }
        out
    }
}

/// Everything a finished drive leaves behind, generic in the layer so
/// callers can keep interrogating the simulator.
pub struct DriveOutcome<L: InferenceLayer> {
    pub metrics: RunMetrics,
    pub sim: Sim<OverlayNode<L>>,
}

/// A finished run with the layer type erased.
pub struct RunOutcome {
    pub cal: CalibrationModel,
    pub metrics: RunMetrics,
    /// Final per-node bias estimate; None for dead nodes and invalid
    /// beliefs.
    pub final_estimates: Vec<Option<f64>>,
    pub alive_at_end: Vec<bool>,
}

/// Posterior bias means given a subset of measurements, memoized by subset.
/// Components recur tick after tick, and each solve is a dense factor
/// product, so the cache carries most of the tick loop's cost.
struct OracleCache<'a> {
    cal: &'a CalibrationModel,
    by_subset: BTreeMap<Vec<MeasId>, Vec<f64>>,
}

impl<'a> OracleCache<'a> {
    fn new(cal: &'a CalibrationModel) -> Self {
        OracleCache { cal, by_subset: BTreeMap::new() }
    }

    fn means(&mut self, meas: &[MeasId]) -> Result<&Vec<f64>, HarnessError> {
        if !self.by_subset.contains_key(meas) {
            let means = bias_means(self.cal, meas)?;
            self.by_subset.insert(meas.to_vec(), means);
        }
        Ok(&self.by_subset[meas])
    }
}

/// Partition the live nodes into communication components at time t: an
/// edge exists when both directions have positive quality and no
/// interference window separates the pair right now.
fn components(scn: &Scenario, links: &LinkModel, alive: &[bool], t: f64) -> Vec<Vec<u32>> {
    let n = alive.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if !alive[i] || !alive[j] {
                continue;
            }
            let (a, b) = (NodeId(i as u32), NodeId(j as u32));
            if links.quality(a, b) > 0.0
                && links.quality(b, a) > 0.0
                && !scn.window_blocks(i as u32, j as u32, t)
            {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for i in 0..n {
        if alive[i] {
            comps.entry(find(&mut parent, i)).or_default().push(i as u32);
        }
    }
    comps.into_values().collect()
}

fn bias_estimate(belief: &GaussianFactor, cal: &CalibrationModel, node: usize) -> Option<f64> {
    let marg = belief
        .marginalize(&Scope::singleton(cal.bias_vars[node]))
        .ok()?;
    let (mean, _) = marg.moment_stats().ok()?;
    Some(mean[0])
}

/// Run the simulator tick by tick, grading beliefs each second. The
/// observer sees the simulator after each tick's metrics are recorded,
/// which is how tests watch internal state without a second code path.
pub fn drive<L, F>(
    scn: &Scenario,
    cal: &CalibrationModel,
    alloc: &Allocation,
    layers: Vec<L>,
    mut observe: F,
) -> Result<DriveOutcome<L>, HarnessError>
where
    L: InferenceLayer + QueryBelief,
    F: FnMut(f64, &Sim<OverlayNode<L>>),
{
    let n = scn.nodes as usize;
    assert_eq!(layers.len(), n);
    let links = scn.build_links(&cal.coords);
    let cfg = scn.protocol();
    let nodes: Vec<OverlayNode<L>> = layers
        .into_iter()
        .enumerate()
        .map(|(i, layer)| {
            let id = NodeId(i as u32);
            OverlayNode::new(id, alloc.node(id).local_vars.clone(), layer, cfg.clone())
        })
        .collect();
    let mut sim = Sim::new(
        nodes,
        scn.build_links(&cal.coords),
        &scn.build_failures(),
        SimConfig { latency: scn.latency, seed: scn.seed },
    );

    let mut oracles = OracleCache::new(cal);
    let mut local_means: Vec<Option<f64>> = vec![None; n];
    let mut metrics = RunMetrics::default();

    let ticks = scn.duration.floor() as u64;
    for k in 1..=ticks {
        let t = k as f64;
        sim.run_until(t);

        let alive: Vec<bool> = (0..n).map(|i| sim.is_alive(NodeId(i as u32))).collect();
        let snap = snapshot(&sim);

        // Lane estimates and belief validity.
        let mut est: Vec<Option<f64>> = vec![None; n];
        let mut invalid = 0usize;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let (belief, valid) = sim.node(NodeId(i as u32)).layer().query_belief();
            if valid {
                est[i] = bias_estimate(&belief, cal, i);
            }
            if est[i].is_none() {
                invalid += 1;
            }
        }

        // Oracle that sees every measurement its node could currently reach.
        let mut global_est: Vec<Option<f64>> = vec![None; n];
        for comp in components(scn, &links, &alive, t) {
            let meas: Vec<MeasId> = comp.iter().map(|&i| cal.meas_ids[i as usize]).collect();
            let means = oracles.means(&meas)?;
            for &i in &comp {
                global_est[i as usize] = Some(means[i as usize]);
            }
        }

        // Oracle that sees only the node's own measurement.
        for i in 0..n {
            if alive[i] && local_means[i].is_none() {
                local_means[i] = Some(oracles.means(&[cal.meas_ids[i]])?[i]);
            }
        }
        let local_est: Vec<Option<f64>> = (0..n)
            .map(|i| if alive[i] { local_means[i] } else { None })
            .collect();

        let lane_rms = rms(&est, &cal.true_bias);
        metrics.rows.push(MetricsRow {
            time: t,
            spanning_tree_valid: snap.tree_valid,
            rip_valid: snap.rip_valid,
            rms_robust: if scn.lane == Lane::Robust { lane_rms } else { f64::NAN },
            rms_sumprod: if scn.lane == Lane::Sumprod { lane_rms } else { f64::NAN },
            rms_global_oracle: rms(&global_est, &cal.true_bias),
            rms_local_oracle: rms(&local_est, &cal.true_bias),
            invalid_belief_count: invalid,
            tree_cost: snap.tree_cost(&links),
            bytes_sent_total: sim.bytes_sent_total(),
        });
        observe(t, &sim);
    }

    Ok(DriveOutcome { metrics, sim })
}

/// Parse-to-trace entry point: generate the model, plan the distribution,
/// pick the lane's layer, and drive the run.
pub fn run_scenario(scn: &Scenario) -> Result<RunOutcome, HarnessError> {
    let cal = gen_calibration(scn.nodes as usize, &scn.graph, &scn.params, scn.seed)?;
    let mut tree = build_external_jtree(&cal.model, EliminationOrder::MinFill)?;
    reparameterize(&mut tree, &cal.model)?;
    let node_ids: Vec<NodeId> = (0..scn.nodes).map(NodeId).collect();
    let alloc = distribute(&tree, &cal.model, &node_ids, scn.redundancy)?;

    fn finish<L: InferenceLayer + QueryBelief>(
        cal: CalibrationModel,
        out: DriveOutcome<L>,
    ) -> RunOutcome {
        let n = cal.n_nodes();
        let mut final_estimates = vec![None; n];
        let mut alive_at_end = vec![false; n];
        for i in 0..n {
            let id = NodeId(i as u32);
            if out.sim.is_alive(id) {
                alive_at_end[i] = true;
                let (belief, valid) = out.sim.node(id).layer().query_belief();
                if valid {
                    final_estimates[i] = bias_estimate(&belief, &cal, i);
                }
            }
        }
        RunOutcome { cal, metrics: out.metrics, final_estimates, alive_at_end }
    }

    match scn.lane {
        Lane::Robust => {
            let layers: Vec<RobustLayer> = node_ids
                .iter()
                .map(|&id| RobustLayer::from_allocation(&cal.model, &tree, alloc.node(id)))
                .collect::<Result<_, _>>()?;
            let out = drive(scn, &cal, &alloc, layers, |_, _| {})?;
            Ok(finish(cal, out))
        }
        Lane::Sumprod => {
            let layers: Vec<SumprodLayer> = node_ids
                .iter()
                .map(|&id| SumprodLayer::from_allocation(&cal.model, &alloc, id))
                .collect::<Result<_, _>>()?;
            let out = drive(scn, &cal, &alloc, layers, |_, _| {})?;
            Ok(finish(cal, out))
        }
    }
}
