//! Text format for describing a full experiment: the sensor graph, the
//! radio environment, the failure plan, and the protocol knobs.
//!
//! The format is line oriented. Each line is a keyword followed by
//! whitespace-separated arguments; `#` starts a comment. Two scenario files
//! that parse equal drive byte-identical runs, which is what makes recorded
//! traces replayable.

use std::collections::BTreeSet;

use crate::netsim::{FailureSchedule, InterferenceWindow, LinkModel};
use crate::overlay::ProtocolConfig;
use crate::NodeId;

use super::calib::{distance, CalibParams, GraphSpec};
use super::run::Lane;
use super::HarnessError;

/// Radio link qualities as a function of the node layout.
#[derive(Clone, Debug, PartialEq)]
pub enum LinkSpec {
    /// Every ordered pair delivers with the same probability.
    Full(f64),
    /// Quality decays with distance: q0 * exp(-d / scale).
    Decay { q0: f64, scale: f64 },
}

/// When nodes die.
#[derive(Clone, Debug, PartialEq)]
pub enum FailSpec {
    None,
    /// Scripted death times.
    At(Vec<(u32, f64)>),
    /// Independent exponential lifetimes drawn from a dedicated seed.
    Rate { rate: f64, seed: u64 },
}

/// One parsed experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub nodes: u32,
    pub lane: Lane,
    pub seed: u64,
    pub duration: f64,
    pub redundancy: u32,
    pub graph: GraphSpec,
    pub params: CalibParams,
    pub link: LinkSpec,
    /// Per-pair overrides applied after `link`, as (from, to, quality).
    pub link_overrides: Vec<(u32, u32, f64)>,
    pub latency: f64,
    /// Timed interference: (start, end, side A, side B).
    pub windows: Vec<(f64, f64, Vec<u32>, Vec<u32>)>,
    pub failures: FailSpec,
    pub optimize: bool,
    pub beacon_period: f64,
    pub retransmit_period: f64,
    pub eval_period: f64,
    pub ewma_alpha: f64,
    pub k_loss: u32,
    pub candidate_min_rate: f64,
    pub candidate_min_heard: u64,
}

impl Scenario {
    /// A runnable baseline: n nodes on a chain, perfect full links, no
    /// failures. Scenario files override from here.
    pub fn base(nodes: u32) -> Self {
        let proto = ProtocolConfig::new(nodes);
        Scenario {
            nodes,
            lane: Lane::Robust,
            seed: 0,
            duration: 60.0,
            redundancy: 1,
            graph: GraphSpec::Chain,
            params: CalibParams::default(),
            link: LinkSpec::Full(1.0),
            link_overrides: Vec::new(),
            latency: 0.01,
            windows: Vec::new(),
            failures: FailSpec::None,
            optimize: proto.optimize,
            beacon_period: proto.beacon_period,
            retransmit_period: proto.retransmit_period,
            eval_period: proto.eval_period,
            ewma_alpha: proto.ewma_alpha,
            k_loss: proto.k_loss,
            candidate_min_rate: proto.candidate_min_rate,
            candidate_min_heard: proto.candidate_min_heard,
        }
    }

    /// Parse a scenario file. Errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut scn = Scenario::base(2);
        let mut saw_nodes = false;
        let mut fail_at: Vec<(u32, f64)> = Vec::new();
        let mut fail_rate: Option<(f64, u64)> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| HarnessError::Parse { line, msg };
            let body = raw.split('#').next().unwrap_or("");
            let mut it = body.split_whitespace();
            let Some(key) = it.next() else { continue };
            let args: Vec<&str> = it.collect();
            let argn = |k: usize| -> Result<&str, HarnessError> {
                args.get(k).copied().ok_or_else(|| HarnessError::Parse {
                    line,
                    msg: format!("{key} is missing argument {}", k + 1),
                })
            };
            macro_rules! num {
                ($k:expr, $t:ty) => {
                    argn($k)?.parse::<$t>().map_err(|e| HarnessError::Parse {
                        line,
                        msg: format!("bad {key} argument {:?}: {e}", args[$k]),
                    })
                };
            }
            match key {
                "nodes" => {
                    scn.nodes = num!(0, u32)?;
                    saw_nodes = true;
                }
                "lane" => {
                    scn.lane = match argn(0)? {
                        "robust" => Lane::Robust,
                        "sumprod" => Lane::Sumprod,
                        other => return Err(err(format!("unknown lane {other:?}"))),
                    }
                }
                "seed" => scn.seed = num!(0, u64)?,
                "duration" => scn.duration = num!(0, f64)?,
                "redundancy" => scn.redundancy = num!(0, u32)?,
                "graph" => {
                    scn.graph = match argn(0)? {
                        "chain" => GraphSpec::Chain,
                        "grid" => GraphSpec::Grid { cols: num!(1, usize)? },
                        "geometric" => GraphSpec::Geometric { radius: num!(1, f64)? },
                        other => return Err(err(format!("unknown graph {other:?}"))),
                    }
                }
                "anchor_var" => scn.params.anchor_var = num!(0, f64)?,
                "coupling_var" => scn.params.coupling_var = num!(0, f64)?,
                "bias_var" => scn.params.bias_var = num!(0, f64)?,
                "noise_var" => scn.params.noise_var = num!(0, f64)?,
                "link" => {
                    scn.link = match argn(0)? {
                        "full" => LinkSpec::Full(num!(1, f64)?),
                        "decay" => LinkSpec::Decay { q0: num!(1, f64)?, scale: num!(2, f64)? },
                        other => return Err(err(format!("unknown link model {other:?}"))),
                    }
                }
                "linkq" => {
                    scn.link_overrides
                        .push((num!(0, u32)?, num!(1, u32)?, num!(2, f64)?));
                }
                "latency" => scn.latency = num!(0, f64)?,
                "window" => {
                    let start = num!(0, f64)?;
                    let end = num!(1, f64)?;
                    let side = |s: &str| -> Result<Vec<u32>, HarnessError> {
                        s.split(',')
                            .map(|x| {
                                x.parse::<u32>().map_err(|e| HarnessError::Parse {
                                    line,
                                    msg: format!("bad node id {x:?}: {e}"),
                                })
                            })
                            .collect()
                    };
                    scn.windows
                        .push((start, end, side(argn(2)?)?, side(argn(3)?)?));
                }
                "fail" => {
                    if argn(0)? == "rate" {
                        fail_rate = Some((num!(1, f64)?, num!(2, u64)?));
                    } else {
                        fail_at.push((num!(0, u32)?, num!(1, f64)?));
                    }
                }
                "optimize" => {
                    scn.optimize = match argn(0)? {
                        "on" => true,
                        "off" => false,
                        other => return Err(err(format!("expected on or off, got {other:?}"))),
                    }
                }
                "beacon_period" => scn.beacon_period = num!(0, f64)?,
                "retransmit_period" => scn.retransmit_period = num!(0, f64)?,
                "eval_period" => scn.eval_period = num!(0, f64)?,
                "ewma_alpha" => scn.ewma_alpha = num!(0, f64)?,
                "k_loss" => scn.k_loss = num!(0, u32)?,
                "candidate_min_rate" => scn.candidate_min_rate = num!(0, f64)?,
                "candidate_min_heard" => scn.candidate_min_heard = num!(0, u64)?,
                other => return Err(err(format!("unknown keyword {other:?}"))),
            }
        }

        if !saw_nodes {
            return Err(HarnessError::Invalid("scenario never sets nodes".into()));
        }
        scn.failures = match (fail_at.is_empty(), fail_rate) {
            (true, None) => FailSpec::None,
            (false, None) => FailSpec::At(fail_at),
            (true, Some((rate, seed))) => FailSpec::Rate { rate, seed },
            (false, Some(_)) => {
                return Err(HarnessError::Invalid(
                    "scenario mixes scripted and random failures".into(),
                ))
            }
        };
        scn.validate()?;
        Ok(scn)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Invalid(msg));
        if self.nodes < 2 {
            return bad(format!("need at least 2 nodes, got {}", self.nodes));
        }
        if self.redundancy < 1 {
            return bad("redundancy must be at least 1".into());
        }
        if !(self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.latency > 0.0) {
            return bad(format!("latency must be positive, got {}", self.latency));
        }
        let q_ok = |q: f64| (0.0..=1.0).contains(&q);
        match self.link {
            LinkSpec::Full(q) if !q_ok(q) => {
                return bad(format!("link quality {q} outside [0, 1]"))
            }
            LinkSpec::Decay { q0, scale } if !q_ok(q0) || !(scale > 0.0) => {
                return bad(format!("bad decay parameters q0={q0} scale={scale}"))
            }
            _ => {}
        }
        for &(a, b, q) in &self.link_overrides {
            if a >= self.nodes || b >= self.nodes || !q_ok(q) {
                return bad(format!("bad link override {a} {b} {q}"));
            }
        }
        for (start, end, sa, sb) in &self.windows {
            if !(end > start) || sa.is_empty() || sb.is_empty() {
                return bad(format!("bad window {start}..{end}"));
            }
            if sa.iter().chain(sb).any(|&i| i >= self.nodes) {
                return bad(format!("window {start}..{end} names unknown nodes"));
            }
        }
        if let FailSpec::At(ref times) = self.failures {
            if times.iter().any(|&(i, _)| i >= self.nodes) {
                return bad("failure names an unknown node".into());
            }
        }
        Ok(())
    }

    /// Realize the link qualities over the generated layout, including any
    /// interference windows.
    pub fn build_links(&self, coords: &[(f64, f64)]) -> LinkModel {
        let mut links = match self.link {
            LinkSpec::Full(q) => LinkModel::full(self.nodes, q),
            LinkSpec::Decay { q0, scale } => {
                let mut l = LinkModel::new();
                for i in 0..self.nodes {
                    for j in 0..self.nodes {
                        if i != j {
                            let d = distance(coords[i as usize], coords[j as usize]);
                            l.set(NodeId(i), NodeId(j), q0 * (-d / scale).exp());
                        }
                    }
                }
                l
            }
        };
        for &(a, b, q) in &self.link_overrides {
            links.set(NodeId(a), NodeId(b), q);
        }
        for (start, end, sa, sb) in &self.windows {
            links.add_window(InterferenceWindow {
                start: *start,
                end: *end,
                a: sa.iter().map(|&i| NodeId(i)).collect::<BTreeSet<_>>(),
                b: sb.iter().map(|&i| NodeId(i)).collect::<BTreeSet<_>>(),
            });
        }
        links
    }

    pub fn build_failures(&self) -> FailureSchedule {
        match &self.failures {
            FailSpec::None => FailureSchedule::none(),
            FailSpec::At(times) => {
                FailureSchedule::at(times.iter().map(|&(i, t)| (NodeId(i), t)))
            }
            FailSpec::Rate { rate, seed } => {
                FailureSchedule::exponential(self.nodes, *rate, *seed)
            }
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        let mut cfg = ProtocolConfig::new(self.nodes);
        cfg.beacon_period = self.beacon_period;
        cfg.retransmit_period = self.retransmit_period;
        cfg.eval_period = self.eval_period;
        cfg.ewma_alpha = self.ewma_alpha;
        cfg.k_loss = self.k_loss;
        cfg.candidate_min_rate = self.candidate_min_rate;
        cfg.candidate_min_heard = self.candidate_min_heard;
        cfg.optimize = self.optimize;
        cfg
    }

    /// True when interference separates i and j at time t. Mirrors how the
    /// transport applies windows, for use by offline oracles.
    pub fn window_blocks(&self, i: u32, j: u32, t: f64) -> bool {
        self.windows.iter().any(|(start, end, sa, sb)| {
            t >= *start
                && t < *end
                && ((sa.contains(&i) && sb.contains(&j)) || (sa.contains(&j) && sb.contains(&i)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_full_scenario_file_round_trips_every_field() {
        let text = "\
# demo scenario
nodes 10
lane sumprod
seed 42
duration 120.5        # two minutes and change
redundancy 2
graph grid 5
anchor_var 50
coupling_var 0.25
bias_var 2
noise_var 0.1
link decay 0.95 3.5
linkq 0 9 0.05
latency 0.02
window 60 90 0,1,2,3,4 5,6,7,8,9
fail 3 100
fail 7 110
optimize off
beacon_period 0.5
k_loss 4
";
        let scn = Scenario::parse(text).unwrap();
        assert_eq!(scn.nodes, 10);
        assert_eq!(scn.lane, Lane::Sumprod);
        assert_eq!(scn.seed, 42);
        assert_eq!(scn.duration, 120.5);
        assert_eq!(scn.redundancy, 2);
        assert_eq!(scn.graph, GraphSpec::Grid { cols: 5 });
        assert_eq!(scn.params.anchor_var, 50.0);
        assert_eq!(scn.params.coupling_var, 0.25);
        assert_eq!(scn.params.bias_var, 2.0);
        assert_eq!(scn.params.noise_var, 0.1);
        assert_eq!(scn.link, LinkSpec::Decay { q0: 0.95, scale: 3.5 });
        assert_eq!(scn.link_overrides, vec![(0, 9, 0.05)]);
        assert_eq!(scn.latency, 0.02);
        assert_eq!(
            scn.windows,
            vec![(60.0, 90.0, vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9])]
        );
        assert_eq!(scn.failures, FailSpec::At(vec![(3, 100.0), (7, 110.0)]));
        assert!(!scn.optimize);
        assert_eq!(scn.beacon_period, 0.5);
        assert_eq!(scn.k_loss, 4);
        // untouched knobs keep protocol defaults
        assert_eq!(scn.eval_period, ProtocolConfig::new(10).eval_period);
    }

    #[test]
    fn parse_errors_carry_the_line_number() {
        let text = "nodes 5\nlane robust\ngraph pentagon\n";
        match Scenario::parse(text) {
            Err(HarnessError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("pentagon"), "{msg}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keywords_are_rejected() {
        let err = Scenario::parse("nodes 4\nwarp_speed 9\n").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, .. }));
    }

    #[test]
    fn scripted_and_random_failures_cannot_mix() {
        let err = Scenario::parse("nodes 4\nfail 1 10\nfail rate 0.1 7\n").unwrap_err();
        assert!(matches!(err, HarnessError::Invalid(_)));
    }

    #[test]
    fn windows_block_exactly_their_span_and_sides() {
        let scn = Scenario::parse("nodes 6\nwindow 10 20 0,1 4,5\n").unwrap();
        assert!(scn.window_blocks(0, 4, 10.0));
        assert!(scn.window_blocks(5, 1, 19.9));
        assert!(!scn.window_blocks(0, 4, 20.0));
        assert!(!scn.window_blocks(0, 1, 15.0));
        assert!(!scn.window_blocks(2, 4, 15.0));
    }

    #[test]
    fn decay_links_fall_off_with_distance_and_keep_overrides() {
        let scn =
            Scenario::parse("nodes 4\ngraph chain\nlink decay 1.0 2.0\nlinkq 0 3 0.77\n").unwrap();
        let coords: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, 0.0)).collect();
        let links = scn.build_links(&coords);
        let q1 = links.quality(NodeId(0), NodeId(1));
        let q2 = links.quality(NodeId(0), NodeId(2));
        assert!((q1 - (-0.5f64).exp()).abs() < 1e-12);
        assert!((q2 - (-1.0f64).exp()).abs() < 1e-12);
        assert!(q1 > q2);
        assert_eq!(links.quality(NodeId(0), NodeId(3)), 0.77);
        assert!((links.quality(NodeId(3), NodeId(0)) - (-1.5f64).exp()).abs() < 1e-12);
    }
}
