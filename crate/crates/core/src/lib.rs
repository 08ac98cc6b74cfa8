//! Targeted change detection for heterogeneous co-registered raster pairs.
//!
//! The pipeline has two stages. Code-aligned autoencoders ([`cae`]) translate
//! each image into the other sensor's domain so that difference images can be
//! formed even when the two acquisitions share no common measurement space.
//! A two-step one-class classifier ([`occ`]) then learns the change class of
//! interest from a small set of labelled positive pixels: a Gaussian mixture
//! updated once with EM picks reliable negatives, and an ensemble of five MLPs
//! trained on positives plus reliable negatives produces the final map.
//!
//! [`eval`] holds the metrics, rendering and ablation harness; [`nnkit`] is the
//! small neural-network engine both stages are built on.

pub mod cae;
pub mod error;
pub mod eval;
pub mod nnkit;
pub mod occ;
pub mod raster;
pub mod seed;

pub use error::{Error, Result};
