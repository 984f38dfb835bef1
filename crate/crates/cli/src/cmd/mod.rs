pub mod generate;
pub mod infer;
pub mod partition;
pub mod validate;

use std::path::Path;

use anyhow::{Context, Result};
use dbrsplash::models::ModelError;
use dbrsplash::oracle::OracleError;
use dbrsplash::partition::PartitionError;
use dbrsplash::runtime::RuntimeError;
use dbrsplash::FactorGraph;

use crate::exit;

/// Maps an error chain to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(OracleError::Capacity(_)) = cause.downcast_ref() {
            return exit::CAPACITY;
        }
        if let Some(r) = cause.downcast_ref::<RuntimeError>() {
            return match r {
                RuntimeError::Mismatch(_) | RuntimeError::Config(_) => exit::USAGE,
                _ => exit::FAILURE,
            };
        }
        if cause.is::<ModelError>() || cause.is::<PartitionError>() || cause.is::<OracleError>() {
            return exit::USAGE;
        }
        if cause.is::<std::io::Error>() {
            return exit::USAGE;
        }
    }
    exit::FAILURE
}

pub fn load_graph(path: &Path) -> Result<FactorGraph> {
    dbrsplash::models::load_graph(path).with_context(|| format!("reading graph {}", path.display()))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
