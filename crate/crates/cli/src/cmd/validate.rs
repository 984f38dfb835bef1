use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use dbrsplash::oracle::{accuracy, exact_marginals, gibbs_marginals, load_beliefs, per_variable_l1, Beliefs};
use serde::{Deserialize, Serialize};

use super::{load_graph, write_file};
use crate::exit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Against {
    /// Exact marginals by variable elimination; fails with exit 4 when too large.
    Exact,
    /// Single-site Gibbs sampling.
    Gibbs,
    /// A beliefs file given by --reference.
    File,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    beliefs: PathBuf,
    #[arg(long, value_enum, default_value_t = Against::Exact)]
    against: Against,
    /// Needed for exact and gibbs.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 10_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace from `infer --trace-out`, scored snapshot by snapshot.
    #[arg(long, requires = "csv")]
    trace: Option<PathBuf>,
    /// Where to write `updates,mean_l1` rows for --trace.
    #[arg(long, requires = "trace")]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary {
    mean_l1: f64,
    worst_variable: usize,
    worst_l1: f64,
}

#[derive(Deserialize)]
struct Snapshot {
    updates: u64,
    beliefs: Beliefs,
}

fn reference(args: &Args) -> Result<Beliefs> {
    if args.against == Against::File {
        let Some(p) = &args.reference else {
            bail!("--against file needs --reference")
        };
        return load_beliefs(p).with_context(|| format!("reading {}", p.display()));
    }
    let Some(gp) = &args.graph else {
        bail!("--against {:?} needs --graph", args.against)
    };
    let g = load_graph(gp)?;
    Ok(match args.against {
        Against::Exact => exact_marginals(&g)?,
        _ => gibbs_marginals(&g, args.samples, args.burn_in, args.seed)?,
    })
}

pub fn run(args: Args) -> Result<u8> {
    let ours = load_beliefs(&args.beliefs).with_context(|| format!("reading {}", args.beliefs.display()))?;
    let truth = reference(&args)?;
    let per = per_variable_l1(&ours, &truth)?;
    let (worst_variable, worst_l1) =
        per.iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |best, (v, d)| if d > best.1 { (v, d) } else { best });
    println!(
        "{}",
        serde_json::to_string(&Summary {
            mean_l1: accuracy(&ours, &truth)?,
            worst_variable,
            worst_l1,
        })?
    );
    if let (Some(trace), Some(csv)) = (&args.trace, &args.csv) {
        let text = std::fs::read_to_string(trace).with_context(|| format!("reading {}", trace.display()))?;
        let mut out = String::from("updates,mean_l1\n");
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let s: Snapshot =
                serde_json::from_str(line).with_context(|| format!("{}: line {}", trace.display(), i + 1))?;
            writeln!(out, "{},{}", s.updates, accuracy(&s.beliefs, &truth)?)?;
        }
        write_file(csv, out)?;
    }
    Ok(exit::OK)
}
