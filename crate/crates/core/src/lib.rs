//! Skeleton-based motion-class recognition for manual assembly processes.
//!
//! Labeled two-hand landmark streams are cut into sliding windows,
//! preprocessed, and classified by small sequence networks trained from
//! scratch. Search, evaluation and a synthetic data generator round out the
//! pipeline.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod predict;
pub mod preprocess;
pub mod report;
pub mod search;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
