//! Reconstruction-based fault detection for fleets of industrial units whose
//! operating conditions keep moving.
//!
//! A source autoencoder is trained on one well-instrumented unit. For each
//! new (target) unit, a small adaptive module maps the control variables to a
//! correction that is added to the frozen autoencoder's reconstruction; the
//! module's batch-normalization layer tracks test-time statistics. Baselines
//! (no adaptation, AdaBN, MMD fine-tuning), the scoring chain, a synthetic
//! fleet simulator and the evaluation harness live alongside.

pub mod adaptation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod scoring;
pub mod simulator;

pub use error::{Error, Result};
