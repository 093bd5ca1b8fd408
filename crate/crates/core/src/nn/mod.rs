//! Small feed-forward network engine: dense layers, batch normalization with
//! train/eval/adapt modes, ReLU, MSE, reverse-mode gradients and Adam.
//!
//! Everything is `f64` and single threaded so runs are bit-reproducible.

pub mod adam;
pub mod archive;
pub mod batchnorm;
pub mod dense;
pub mod network;
pub mod ops;

pub use adam::{AdamConfig, AdamState};
pub use archive::{Archive, NamedTensor};
pub use batchnorm::{BatchNormLayer, BnMode};
pub use dense::DenseLayer;
pub use network::{block, GradientTape, Layer, LayerSpec, Network, Trace};
pub use ops::{mse_grad, mse_loss, relu};
