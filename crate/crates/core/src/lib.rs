//! Subject-aware benchmark for binary empathy detection from video-derived
//! tabular behavioural features.
//!
//! The pipeline aggregates per-frame features into fixed-width rows,
//! selects features per fold, and evaluates classical baselines alongside
//! in-context learning and fine-tuning of tabular foundation models under
//! repeated stratified k-fold and leave-one-subject-out protocols.

pub mod dataset;
pub mod error;
pub mod featurize;
pub mod finetune;
pub mod models;
pub mod protocol;
pub mod runner;

pub use error::{Error, Result};
