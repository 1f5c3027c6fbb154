//! Algorithms for cross-domain time-series anomaly detection that combines
//! transfer learning (k-means++ sub-domains and CORAL alignment) with
//! pool-based active learning on random-forest detectors.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! files, threads or the command line lives in the `tsal` companion crate.
//!
//! Module map:
//!
//! * [`ingest`]: labelled series, dataset catalogs, transfer pairs, stratified sampling
//! * [`features`]: per-point 24-dimensional trailing-window features
//! * [`cluster`]: k-means++ with Lloyd refinement on standardized features
//! * [`adapt`]: CORAL covariance (and mean) alignment
//! * [`forest`]: CART / random forest with out-of-bag error
//! * [`activelearn`]: certainty ranking, context-diversity filter, budgeted rounds
//! * [`evaluate`]: stratified k-fold plans and precision / recall / F1
//! * [`pipeline`]: one fold of the transfer + active-learning protocol, and the
//!   within-domain baseline
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod activelearn;
pub mod adapt;
pub mod cluster;
pub mod evaluate;
pub mod features;
pub mod forest;
pub mod ingest;
pub mod linalg;
pub mod matrix;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use matrix::Matrix;

/// Dimensionality of the built-in feature vectors.
pub const N_FEATURES: usize = 24;
