//! Reference vector indexes and measurement machinery for benchmarking
//! approximate nearest neighbor search.
//!
//! The crate is organised bottom-up:
//!
//! - [`vector`]: dense and packed-bit vector storage and the four dissimilarity measures.
//! - [`quantization`]: binarization, 8-bit scalar quantization and product quantization with ADC.
//! - [`oracle`]: exact k-NN and ground truth.
//! - [`indexes`]: one reference index per algorithm family behind a uniform search contract.
//! - [`metrics`]: recall, QPS, relative contrast, OOD diagnostics and Pareto frontiers.
//! - [`datasets`]: file formats and synthetic workload generators.
//! - [`runner`]: grid expansion, timed benchmark execution and result persistence.
//! - [`report`]: static CSV/HTML report emission.

pub mod datasets;
pub mod error;
pub mod indexes;
pub mod metrics;
pub mod oracle;
pub mod quantization;
pub mod report;
pub mod runner;
pub mod vector;

pub use error::{Error, Result};
pub use vector::{BitMatrix, DenseMatrix, Measure, Neighbor, VectorRef, VectorSet};

/// Version string stamped into benchmark records.
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");
