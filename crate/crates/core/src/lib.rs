//! Balanced synthetic dataset generation by steering a generator's latent
//! space with logistic probes.
//!
//! The crate covers the whole loop: measure group skew in unguided samples,
//! train one-vs-rest probes over latents, steer samples along each probe's
//! unit parameter direction, verify every output with a feature-space
//! classifier until exact per-group quotas are met, then label the records
//! and queue low-confidence labels for human review.
//!
//! A seeded [`generator::Oracle`] stands in for a real generative model; a
//! real one is reachable through [`generator::ExternalGenerator`].

pub mod classifier;
pub mod config;
pub mod error;
pub mod generator;
pub mod labeling;
pub mod latent;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod review;
pub mod steering;
pub mod workflow;

pub use error::{Error, Result};
