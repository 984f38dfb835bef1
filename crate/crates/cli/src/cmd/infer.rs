use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::ValueEnum;
use dbrsplash::oracle::write_beliefs;
use dbrsplash::partition::{
    load_partition, over_partition_and_assign, write_update_counts, Partitioning, WeightedCutProblem, DEFAULT_C_COMM,
    DEFAULT_GAMMA,
};
use dbrsplash::runtime::{metrics_jsonl, run_inference, RuntimeConfig, Scheduler};
use dbrsplash::ResidualMode;
use serde::Serialize;

use super::{load_graph, write_file};
use crate::exit;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Schedule {
    /// Prioritize by accumulated belief change.
    Belief,
    /// Prioritize by the largest inbound message change.
    Message,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    graph: PathBuf,
    /// Partition file from `partition`; overrides --workers.
    #[arg(long)]
    partition: Option<PathBuf>,
    /// Cut the graph uniformly into this many workers.
    #[arg(long, default_value_t = 1, conflicts_with = "partition")]
    workers: usize,
    /// Seed for the uniform cut.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    beta: f64,
    #[arg(long, default_value_t = 0.6)]
    damping: f64,
    /// Splash work bound; defaults to a graph-dependent value.
    #[arg(long)]
    splash_work: Option<f64>,
    /// Splash loops between external sends.
    #[arg(long, default_value_t = 10)]
    flush: u64,
    #[arg(long, value_enum, default_value_t = Schedule::Belief)]
    schedule: Schedule,
    /// Total vertex-update budget.
    #[arg(long)]
    max_updates: Option<u64>,
    /// Round-robin workers on one thread; output is reproducible.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
    /// Per-vertex update counts, usable as `partition --update-counts`.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Per-loop metrics as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Belief snapshot interval in updates; needs --deterministic.
    #[arg(long, requires = "trace_out", requires = "deterministic")]
    trace_every: Option<u64>,
    /// Snapshots as JSON lines of `{updates, beliefs}`.
    #[arg(long, requires = "trace_every")]
    trace_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    converged: bool,
    terminated_by_token: bool,
    total_updates: u64,
    msgs_sent: u64,
    msgs_received: u64,
    max_residual: f64,
    workers: usize,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    updates: u64,
    beliefs: &'a [Vec<f64>],
}

pub fn run(args: Args) -> Result<u8> {
    let graph = load_graph(&args.graph)?;
    let part = match &args.partition {
        Some(p) => load_partition(p)?,
        None if args.workers <= 1 => Partitioning::single(graph.num_vertices()),
        None => {
            if args.workers > graph.num_vertices() {
                bail!(
                    "{} workers for a graph of {} vertices",
                    args.workers,
                    graph.num_vertices()
                );
            }
            let prob = WeightedCutProblem::uninformed(&graph, DEFAULT_C_COMM, DEFAULT_GAMMA, args.workers)?;
            over_partition_and_assign(&prob, args.workers, 1, args.seed)?
        }
    };
    let cfg = RuntimeConfig {
        beta: args.beta,
        w_max: args.splash_work,
        damping: args.damping,
        flush_interval: args.flush,
        mode: match args.schedule {
            Schedule::Belief => ResidualMode::Belief,
            Schedule::Message => ResidualMode::Message,
        },
        max_updates: args.max_updates.unwrap_or(u64::MAX),
        scheduler: if args.deterministic {
            Scheduler::Deterministic
        } else {
            Scheduler::Threaded
        },
        trace_every: args.trace_every,
    };
    let r = run_inference(&graph, &part, &cfg)?;
    write_file(&args.out, write_beliefs(&r.beliefs))?;
    if let Some(p) = &args.counts {
        write_file(p, write_update_counts(&r.update_counts))?;
    }
    if let Some(p) = &args.metrics {
        write_file(p, metrics_jsonl(&r.metrics))?;
    }
    if let Some(p) = &args.trace_out {
        let mut text = String::new();
        for t in &r.trace {
            text.push_str(&serde_json::to_string(&Snapshot {
                updates: t.updates,
                beliefs: &t.beliefs,
            })?);
            text.push('\n');
        }
        write_file(p, text)?;
    }
    println!(
        "{}",
        serde_json::to_string(&Summary {
            converged: r.converged,
            terminated_by_token: r.terminated_by_token,
            total_updates: r.total_updates,
            msgs_sent: r.msgs_sent,
            msgs_received: r.msgs_received,
            max_residual: r.max_residual,
            workers: part.workers,
        })?
    );
    if r.converged {
        Ok(exit::OK)
    } else {
        log::warn!("run stopped before every residual fell below beta = {}", args.beta);
        Ok(exit::NOT_CONVERGED)
    }
}
