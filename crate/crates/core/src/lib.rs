//! Spectral estimation of soft state-aggregation models `P = U V^T` of
//! finite Markov chains from transition counts.
//!
//! The crate is `no_std` with `alloc`. File formats, the command-line tool
//! and parallel sweeps live in the `softagg` crate.

#![no_std]

extern crate alloc;

pub mod assignment;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod kmeans;
pub mod linalg;
pub mod markov;
pub mod model;
pub mod score;
pub mod spectral;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result, Stage};
pub use estimator::{estimate, estimate_oracle, AggregationEstimate, EstimateOptions, Hunter, ZeroMassPolicy};
pub use markov::{TransitionCounts, TransitionMatrix};
pub use model::SoftAggregationModel;
pub use spectral::{ScaledCountMatrix, SpectralDecomposition, SvdMethod};
