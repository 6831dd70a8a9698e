//! Desk-scale federated-learning simulator with embedded concept-drift detection.
//!
//! Each federated node trains a shallow softmax classifier on its local digit
//! data and ships weight updates to an aggregator that merges them with
//! federated averaging. Alongside the regular training loop every node keeps a
//! drift detector: weight updates are reduced with PCA, clustered into two
//! groups with K-means, and the distance between the two cluster centers is
//! compared against the mean and standard deviation of distances observed
//! across all nodes during a drift-free training phase.
//!
//! Module map:
//!
//! * [`dataset`] - IDX ingestion, synthetic digits, non-IID partitions, drift injection
//! * [`model`] - 784→2 softmax classifier, SGD, weight updates
//! * [`federation`] - rounds, node messages, FedAvg
//! * [`driftdetect`] - PCA, 2-means, cluster distance, threshold verdicts
//! * [`metrics`] - communication-cost ratios
//! * [`harness`] - experiment presets, end-to-end runs, CSV reports

pub mod dataset;
pub mod driftdetect;
pub mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
