use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Subcommand;
use dbrsplash::models::{
    chain_graph, generate_denoise, hub_graph, premature_convergence_chain, random_tree_graph, write_graph, DenoiseSpec,
    HubSpec,
};

use super::write_file;
use crate::exit;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(subcommand)]
    model: Model,
}

#[derive(Subcommand, Debug)]
enum Model {
    /// Grid denoising MRF; also writes `<out>.clean.pgm` and `<out>.noisy.pgm`.
    Denoise {
        #[arg(long, default_value_t = 100)]
        width: usize,
        #[arg(long, default_value_t = 100)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        colors: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Potts penalty in the bottom half.
        #[arg(long, default_value_t = 0.8)]
        strength: f64,
        /// Potts penalty in the top half.
        #[arg(long, default_value_t = 0.2)]
        top_strength: f64,
        #[arg(long, default_value_t = 3)]
        top_block: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Skip the PGM images.
        #[arg(long)]
        no_images: bool,
    },
    /// The five-variable binary chain with conflicting evidence at both ends.
    #[command(name = "chain-4-3")]
    Chain43 {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise chain with random tables and no unary factors.
    Chain {
        #[arg(long, default_value_t = 1000)]
        vars: usize,
        #[arg(long, default_value_t = 2)]
        card: usize,
        /// Log-potentials are drawn from [-spread, spread].
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random tree-structured graph.
    Tree {
        #[arg(long, default_value_t = 10)]
        vars: usize,
        #[arg(long, default_value_t = 4)]
        max_card: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// A few high-degree hub variables shared by many leaves.
    Hub {
        #[arg(long, default_value_t = 3)]
        hubs: usize,
        #[arg(long, default_value_t = 100)]
        leaves: usize,
        #[arg(long, default_value_t = 0.5)]
        coupling: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(args: Args) -> Result<u8> {
    match args.model {
        Model::Denoise {
            width,
            height,
            colors,
            sigma,
            strength,
            top_strength,
            top_block,
            seed,
            out,
            no_images,
        } => {
            let spec = DenoiseSpec {
                width,
                height,
                colors,
                sigma,
                strength,
                top_strength,
                top_block,
                seed,
            };
            let d = generate_denoise(&spec)?;
            write_file(&out, write_graph(&d.graph))?;
            if !no_images {
                write_file(&with_suffix(&out, ".clean.pgm"), d.clean_image(&spec).to_pgm())?;
                write_file(&with_suffix(&out, ".noisy.pgm"), d.noisy_image(&spec).to_pgm())?;
            }
        }
        Model::Chain43 { out } => write_file(&out, write_graph(&premature_convergence_chain().0))?,
        Model::Chain {
            vars,
            card,
            spread,
            seed,
            out,
        } => {
            anyhow::ensure!(
                vars >= 2 && card >= 2,
                "a chain needs at least 2 variables of cardinality >= 2"
            );
            write_file(&out, write_graph(&chain_graph(vars, card, spread, seed)))?
        }
        Model::Tree {
            vars,
            max_card,
            seed,
            out,
        } => {
            anyhow::ensure!(vars >= 1 && max_card >= 2, "need vars >= 1 and max-card >= 2");
            write_file(&out, write_graph(&random_tree_graph(vars, max_card, seed)))?
        }
        Model::Hub {
            hubs,
            leaves,
            coupling,
            seed,
            out,
        } => {
            anyhow::ensure!(hubs >= 1, "need at least one hub");
            let spec = HubSpec {
                hubs,
                leaves,
                coupling,
                seed,
                ..HubSpec::default()
            };
            write_file(&out, write_graph(&hub_graph(&spec)))?
        }
    }
    Ok(exit::OK)
}
