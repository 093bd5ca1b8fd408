//! Reconstruction autoencoder, adaptive correction module and their trainers.

pub mod adaptive;
pub mod autoencoder;
pub mod train;

pub use adaptive::{
    adaptive_specs, AdaptiveInput, AdaptiveModule, AdaptiveOptions, Compensation, TaadModel,
};
pub use autoencoder::{decoder_specs, encoder_specs, Autoencoder, BnSnapshot};
pub use train::{
    adaptive_mse, batch_ranges, reconstruction_mse, train_adaptive, train_autoencoder, EpochRecord,
    TrainConfig, TrainLog,
};
