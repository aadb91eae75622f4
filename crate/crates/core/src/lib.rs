//! Graph contrastive learning with a spectral graph-matching regularizer.
//!
//! Two augmented views of every graph in a batch are encoded by a GIN,
//! normalized onto the unit sphere and contrasted with InfoNCE. Each view's
//! batch embeddings also induce a similarity graph ("graph-of-graphs");
//! the squared Frobenius distance between the two views' normalized
//! Laplacians is added to the objective with weight `beta`.
//!
//! Besides training, the crate ships a harness that numerically checks the
//! inequalities relating the Laplacian mismatch to the contrastive gap and
//! to the uniformity loss (see [`verify`]).

pub mod augment;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod runner;
pub mod seed;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Dataset, Graph};

/// Dense row-major matrix used throughout the crate.
pub type Matrix = ndarray::Array2<f64>;
