//! Pseudo-labeled multi-camera view recommendation.
//!
//! Turns ordinary edited videos (given as per-frame feature sequences) into
//! camera-switch training data: shots are detected, clustered into pseudo
//! cameras, and every hard cut becomes a k-way instance whose candidates are
//! the most visually similar shot from each pseudo camera. A small
//! attention-based recommender trained with InfoNCE consumes those instances.
//!
//! Module map:
//! - [`shots`]: cut detection, shot-list files, video filtering
//! - [`features`]: unit feature vectors, frame descriptors, feature files
//! - [`kmeans`]: seeded K-Means and pseudo-camera assignment
//! - [`instances`]: candidate selection and dataset files
//! - [`model`]: the recommender, InfoNCE, analytic gradients, checkpoints
//! - [`train`]: training loop, accuracy, multi-seed reports
//! - [`pipeline`]: the per-video dataset pipeline
//! - [`bench`]: end-to-end runs on synthetic videos
//! - [`synthetic`]: multi-camera video generator and adjusted Rand index
//! - [`cli`]: the `pseudocam` command-line front end

pub mod bench;
pub mod cli;
pub mod error;
pub mod features;
pub mod instances;
pub mod jsonl;
pub mod kmeans;
pub mod model;
pub mod pipeline;
pub mod shots;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
