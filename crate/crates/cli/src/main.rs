//! Command line front end: run scenarios, sweep seeds, query oracles, and
//! sanity-check scenario files.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use arbor::batch::run_batch;
use arbor::harness::{
    annealed_best_cost, bias_means, exhaustive_best_cost, gen_calibration, greedy_quality_tree,
    run_scenario, spanning_tree_cost, CalibrationModel, Scenario,
};
use arbor::model::{build_external_jtree, distribute, reparameterize, EliminationOrder};
use arbor::NodeId;

#[derive(Parser)]
#[command(name = "arbor", about = "Distributed sensor calibration simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and emit its per-second trace as CSV.
    Run {
        scenario: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one scenario across many seeds and summarize each run.
    Sweep {
        scenario: PathBuf,
        /// Number of runs.
        #[arg(long, default_value_t = 10)]
        runs: u64,
        /// Seed of the first run; later runs count up from here.
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Print the exact posterior bias means for a scenario's model.
    Oracle {
        scenario: PathBuf,
        /// Use only the measurements owned by these nodes (comma separated);
        /// default is all of them.
        #[arg(long, value_delimiter = ',')]
        nodes: Vec<u32>,
    },
    /// Compare offline tree-cost baselines on a scenario's deployment.
    OptBaseline {
        scenario: PathBuf,
        /// Annealing iterations.
        #[arg(long, default_value_t = 5000)]
        iters: usize,
    },
    /// Parse a scenario, generate its model, and report what it implies.
    Validate { scenario: PathBuf },
    /// Run a scenario twice and verify the traces are byte-identical.
    Replay { scenario: PathBuf },
}

fn load(path: &PathBuf) -> Result<Scenario> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    Scenario::parse(&text).with_context(|| format!("parsing scenario {}", path.display()))
}

fn generate(scn: &Scenario) -> Result<CalibrationModel> {
    gen_calibration(scn.nodes as usize, &scn.graph, &scn.params, scn.seed)
        .context("generating the calibration model")
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run { scenario, out } => {
            let scn = load(&scenario)?;
            let outcome = run_scenario(&scn)?;
            let csv = outcome.metrics.to_csv();
            match out {
                Some(path) => fs::write(&path, &csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
            let last = outcome.metrics.rows.last();
            eprintln!(
                "{} ticks, {} bytes sent, {} of {} nodes alive at end",
                outcome.metrics.rows.len(),
                last.map_or(0, |r| r.bytes_sent_total),
                outcome.alive_at_end.iter().filter(|&&a| a).count(),
                scn.nodes,
            );
        }
        Cmd::Sweep { scenario, runs, first_seed } => {
            let scn = load(&scenario)?;
            let seeds: Vec<u64> = (first_seed..first_seed + runs).collect();
            let sums = run_batch(&scn, &seeds)?;
            println!("seed,final_rms,oracle_rms,invalid,tree_valid,rip_valid,bytes,survivors");
            for s in &sums {
                println!(
                    "{},{},{},{},{},{},{},{}",
                    s.seed,
                    s.final_rms,
                    s.oracle_rms,
                    s.invalid_at_end,
                    s.tree_valid_at_end as u8,
                    s.rip_valid_at_end as u8,
                    s.bytes_sent_total,
                    s.survivors,
                );
            }
            let settled = sums.iter().filter(|s| s.tree_valid_at_end).count();
            eprintln!("{settled} of {} runs ended with a valid tree", sums.len());
        }
        Cmd::Oracle { scenario, nodes } => {
            let scn = load(&scenario)?;
            let cal = generate(&scn)?;
            let owners: Vec<u32> = if nodes.is_empty() {
                (0..scn.nodes).collect()
            } else {
                nodes
            };
            if let Some(&bad) = owners.iter().find(|&&i| i >= scn.nodes) {
                bail!("node {bad} does not exist (scenario has {})", scn.nodes);
            }
            let meas: Vec<_> = owners.iter().map(|&i| cal.meas_ids[i as usize]).collect();
            let means = bias_means(&cal, &meas)?;
            println!("node,true_bias,posterior_mean,error");
            for i in 0..scn.nodes as usize {
                println!(
                    "{i},{},{},{}",
                    cal.true_bias[i],
                    means[i],
                    means[i] - cal.true_bias[i],
                );
            }
        }
        Cmd::OptBaseline { scenario, iters } => {
            let scn = load(&scenario)?;
            let cal = generate(&scn)?;
            let mut tree = build_external_jtree(&cal.model, EliminationOrder::MinFill)?;
            reparameterize(&mut tree, &cal.model)?;
            let ids: Vec<NodeId> = (0..scn.nodes).map(NodeId).collect();
            let alloc = distribute(&tree, &cal.model, &ids, scn.redundancy)?;
            let vars: BTreeMap<_, _> = ids
                .iter()
                .map(|&i| (i, alloc.node(i).local_vars.clone()))
                .collect();
            let links = scn.build_links(&cal.coords);
            match greedy_quality_tree(&vars, &links) {
                Some(greedy) => {
                    println!("greedy: {}", spanning_tree_cost(&greedy, &vars, &links));
                }
                None => bail!("the usable links do not connect the nodes"),
            }
            let (annealed, _) = annealed_best_cost(&vars, &links, scn.seed, iters)
                .expect("greedy tree exists, so annealing has a start");
            println!("annealed: {annealed}");
            if scn.nodes <= 8 {
                let (exact, _) =
                    exhaustive_best_cost(&vars, &links).expect("a spanning tree exists");
                println!("exhaustive: {exact}");
            } else {
                println!("exhaustive: skipped ({} nodes > 8)", scn.nodes);
            }
        }
        Cmd::Validate { scenario } => {
            let scn = load(&scenario)?;
            let cal = generate(&scn)?;
            let tree = build_external_jtree(&cal.model, EliminationOrder::MinFill)?;
            let ids: Vec<NodeId> = (0..scn.nodes).map(NodeId).collect();
            let alloc = distribute(&tree, &cal.model, &ids, scn.redundancy)?;
            println!("nodes: {}", scn.nodes);
            println!("environment variables: {}", cal.model.vars().len());
            println!("measurements: {}", cal.model.measurements().len());
            println!("graph edges: {}", cal.temp_edges.len());
            println!("cliques: {}", tree.cliques.len());
            println!("largest clique: {} variables", tree.max_clique_vars());
            let heaviest = ids
                .iter()
                .map(|&i| alloc.node(i).cliques.len())
                .max()
                .unwrap_or(0);
            println!("heaviest node carries {heaviest} cliques");
            println!("ok");
        }
        Cmd::Replay { scenario } => {
            let scn = load(&scenario)?;
            let first = run_scenario(&scn)?.metrics.to_csv();
            let second = run_scenario(&scn)?.metrics.to_csv();
            if first != second {
                bail!("replay diverged: traces differ");
            }
            println!("identical: {} bytes", first.len());
        }
    }
    Ok(())
}
