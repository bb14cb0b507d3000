//! Estimation of label-noise transition matrices from high-order
//! consensuses among each instance's two nearest neighbors.
//!
//! The pipeline: sample centers and find their 2-NN ([`knn`]), count how
//! often the three noisy labels agree in each cyclic pattern
//! ([`consensus`]), then solve the consensus equations for the transition
//! matrix `T` and clean prior `p` ([`solver`]). [`estimate_hoc`] runs all
//! three. [`synth`] generates clusterable data with known noise so every
//! estimate can be scored, [`local`] estimates instance-dependent matrices
//! on neighborhoods, and [`train`] checks estimates downstream with forward
//! loss correction.

pub mod adam;
pub mod config;
pub mod consensus;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod format;
pub mod knn;
pub mod local;
pub mod matrix;
pub mod seed;
pub mod solver;
pub mod stats;
pub mod synth;
pub mod train;

pub use config::{EstimatorConfig, TupleMode};
pub use dataset::{LabeledDataset, Tuple, TupleSet};
pub use error::{HocError, Result};
pub use estimator::{estimate_consensus, estimate_hoc};
pub use matrix::{cyclic_shift_matrix, l11_error, validate, PriorVector, TransitionMatrix, ValidationReport};
pub use solver::{SolverResult, SolverState};
pub use stats::ConsensusStats;
