//! Meta architecture search over NAS-Bench-201 style cells.
//!
//! A dataset encoder and a graph encoder feed a deep-kernel Gaussian process
//! surrogate. Search alternates expected-improvement selection over a
//! candidate pool with gradient ascent in the graph latent space, decoding
//! the ascended latents back to cells.

pub mod bench;
pub mod cli;
pub mod dag;
pub mod diff;
pub mod error;
pub mod experiment;
pub mod graph_vae;
pub mod model;
pub mod report;
pub mod search;
pub mod seed;
pub mod set_encoder;
pub mod surrogate;

pub use error::{Error, Result};
