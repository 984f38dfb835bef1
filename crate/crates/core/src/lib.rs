//! Distributed belief-residual Splash belief propagation on discrete
//! factor graphs.

pub mod graph;
pub mod message;
pub mod models;
pub mod oracle;
pub mod partition;
pub mod runtime;
pub mod scheduler;
pub mod state;

pub use graph::{Factor, FactorGraph, GraphError, VertexId};
pub use message::{Message, LOG_FLOOR};
pub use oracle::{accuracy, Beliefs};
pub use partition::Partitioning;
pub use runtime::{run_inference, InferenceResult, RuntimeConfig, RuntimeError, Scheduler};
pub use state::{ResidualMode, Shard};
