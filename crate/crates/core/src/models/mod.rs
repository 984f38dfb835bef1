//! Problem generators and file formats.

mod denoise;
mod io;
mod synthetic;

pub use denoise::{belief_image, generate_denoise, Denoise, DenoiseSpec};
pub use io::{load_graph, read_graph, save_graph, write_graph, GrayImage, ModelError};
pub use synthetic::{
    chain_graph, hub_graph, premature_convergence_chain, random_tree_graph, replay, HubSpec, Schedule, CHAIN_UNARIES,
    IDENTITY_STRENGTH,
};
