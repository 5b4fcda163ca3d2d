//! Differentially private link prediction on heterogeneous graphs.
//!
//! Node features are privatized by an attention-weighted Gaussian mechanism
//! over meta-path neighborhoods; topology is protected by training a
//! relation-aware variational graph autoencoder with clipped, noised
//! per-example gradients.

pub mod allocator;
pub mod config;
pub mod dp;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod graph;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod vgae;

pub use error::{Error, Result};
