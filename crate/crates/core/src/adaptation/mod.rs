//! The four detector variants and the discrepancy statistic used by the MMD baseline.

pub mod detector;
pub mod mmd;

pub use detector::{Detector, Variant};
pub use mmd::{
    latent_mmd, median_bandwidth, mmd_finetune, mmd_squared, mmd_squared_grad, resolve_bandwidth,
    Bandwidth, Estimator, MmdConfig, MmdOutcome,
};
