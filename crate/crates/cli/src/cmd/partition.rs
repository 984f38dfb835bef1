use std::path::PathBuf;

use anyhow::{Context, Result};
use dbrsplash::partition::{
    communication_cost, over_partition_and_assign, read_update_counts, work_balance, write_partition,
    WeightedCutProblem, DEFAULT_C_COMM, DEFAULT_GAMMA,
};
use serde::Serialize;

use super::{load_graph, write_file};
use crate::exit;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Blocks per worker.
    #[arg(long, default_value_t = 1)]
    overpartition: usize,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    /// Per-message overhead in scalar units.
    #[arg(long, default_value_t = DEFAULT_C_COMM)]
    ccomm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-vertex update counts from a previous run (`infer --counts`).
    #[arg(long)]
    update_counts: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the summary JSON here.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    workers: usize,
    blocks: usize,
    cut_cost: f64,
    work_balance: f64,
    violated: bool,
}

pub fn run(args: Args) -> Result<u8> {
    let graph = load_graph(&args.graph)?;
    let counts = match &args.update_counts {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(read_update_counts(&text, graph.num_vertices()).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let prob = WeightedCutProblem::new(&graph, counts.as_deref(), args.ccomm, args.gamma, 1)?;
    let part = over_partition_and_assign(&prob, args.workers, args.overpartition, args.seed)?;
    if part.violated {
        log::warn!("balance constraint gamma = {} could not be met", args.gamma);
    }
    write_file(&args.out, write_partition(&part))?;
    let summary = Summary {
        workers: part.workers,
        blocks: part.num_blocks(),
        cut_cost: communication_cost(&prob, &part),
        work_balance: work_balance(&prob, &part),
        violated: part.violated,
    };
    let json = serde_json::to_string(&summary)?;
    println!("{json}");
    if let Some(m) = &args.metrics {
        write_file(m, format!("{json}\n"))?;
    }
    Ok(exit::OK)
}
