use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::autoencoder::Autoencoder;
use crate::data::ChannelLayout;
use crate::error::{Error, Result};
use crate::nn::{Archive, BnMode, LayerSpec, NamedTensor, Network};

pub const ADAPTIVE_HIDDEN: usize = 10;

/// Which reconstructed channels receive the correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    /// Correction over all `k` channels.
    #[default]
    Full,
    /// Correction over measurement channels only; control channels get zero.
    MeasurementsOnly,
}

/// What the adaptive module sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AdaptiveInput {
    /// Control variables only.
    #[default]
    #[serde(rename = "w")]
    Controls,
    /// Control variables followed by the autoencoder's reconstruction.
    #[serde(rename = "w+prediction")]
    ControlsAndPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdaptiveOptions {
    #[serde(default)]
    pub compensate: Compensation,
    #[serde(default)]
    pub adaptive_input: AdaptiveInput,
}

/// `dense(in -> 10) -> batchnorm -> relu -> dense(10 -> out) -> relu`.
///
/// The trailing ReLU makes the correction non-negative: it can only raise a
/// reconstruction, never lower it.
pub fn adaptive_specs(in_dim: usize, out_dim: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            input: in_dim,
            output: ADAPTIVE_HIDDEN,
        },
        LayerSpec::BatchNorm {
            dim: ADAPTIVE_HIDDEN,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            input: ADAPTIVE_HIDDEN,
            output: out_dim,
        },
        LayerSpec::Relu,
    ]
}

/// Maps control variables to a correction `delta` added to the frozen
/// autoencoder's reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveModule {
    pub net: Network,
    pub layout: ChannelLayout,
    pub options: AdaptiveOptions,
}

impl AdaptiveModule {
    pub fn build(layout: ChannelLayout, options: AdaptiveOptions, seed: u64) -> Result<Self> {
        if layout.measurements == 0 || layout.controls == 0 {
            return Err(Error::config(
                "adaptive module needs at least one measurement and one control channel",
            ));
        }
        let (i, o) = Self::dims(layout, options);
        Ok(Self {
            net: Network::new(adaptive_specs(i, o), seed)?,
            layout,
            options,
        })
    }

    fn dims(layout: ChannelLayout, options: AdaptiveOptions) -> (usize, usize) {
        let input = match options.adaptive_input {
            AdaptiveInput::Controls => layout.controls,
            AdaptiveInput::ControlsAndPrediction => layout.controls + layout.width(),
        };
        let output = match options.compensate {
            Compensation::Full => layout.width(),
            Compensation::MeasurementsOnly => layout.measurements,
        };
        (input, output)
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.net.input_dim()];
        w.extend(self.net.dense_layers().map(|d| d.out_dim()));
        w
    }

    /// Assembles the module input from a `[x, w]` batch and its reconstruction.
    pub fn input_from(
        &self,
        batch: ArrayView2<f64>,
        x_hat: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if batch.ncols() != self.layout.width() {
            return Err(Error::config(format!(
                "batch has {} columns, schema expects {}",
                batch.ncols(),
                self.layout.width()
            )));
        }
        let w = batch.slice(s![.., self.layout.control_range()]);
        Ok(match self.options.adaptive_input {
            AdaptiveInput::Controls => w.to_owned(),
            AdaptiveInput::ControlsAndPrediction => concatenate![Axis(1), w, x_hat],
        })
    }

    /// Widens a module output to all `k` channels.
    pub fn pad(&self, delta: Array2<f64>) -> Array2<f64> {
        match self.options.compensate {
            Compensation::Full => delta,
            Compensation::MeasurementsOnly => {
                let zeros = Array2::zeros((delta.nrows(), self.layout.controls));
                concatenate![Axis(1), delta, zeros]
            }
        }
    }

    /// Columns of a `k`-wide matrix the module is trained against.
    pub fn compensated<'a>(&self, full: ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        match self.options.compensate {
            Compensation::Full => full,
            Compensation::MeasurementsOnly => full.slice_move(s![.., ..self.layout.measurements]),
        }
    }

    /// Module output, padded to `k` columns.
    pub fn delta(&mut self, input: ArrayView2<f64>, adapt: bool) -> Result<Array2<f64>> {
        let out = if adapt {
            self.net.forward(input, BnMode::Adapt)?
        } else {
            self.net.forward_eval(input)?
        };
        Ok(self.pad(out))
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.net.to_tensors("adaptive")
    }

    pub fn from_archive(
        layout: ChannelLayout,
        options: AdaptiveOptions,
        archive: &Archive,
    ) -> Result<Self> {
        let (i, o) = Self::dims(layout, options);
        Ok(Self {
            net: Network::from_archive(adaptive_specs(i, o), archive, "adaptive")?,
            layout,
            options,
        })
    }
}

/// Frozen autoencoder plus adaptive module.
#[derive(Debug, Clone, PartialEq)]
pub struct TaadModel {
    pub ae: Autoencoder,
    pub adaptive: AdaptiveModule,
}

impl TaadModel {
    pub fn new(mut ae: Autoencoder, adaptive: AdaptiveModule) -> Result<Self> {
        if ae.width() != adaptive.layout.width() {
            return Err(Error::config(
                "autoencoder width does not match the channel layout",
            ));
        }
        ae.set_frozen(true);
        Ok(Self { ae, adaptive })
    }

    /// `reconstruct(ae, batch, Eval) + pad(h(w))`. With `adapt`, the module's
    /// batchnorm normalizes by this batch and stores its statistics; the
    /// autoencoder always runs in eval mode.
    pub fn predict(&mut self, batch: ArrayView2<f64>, adapt: bool) -> Result<Array2<f64>> {
        let x_hat = self.ae.reconstruct_eval(batch)?;
        let input = self.adaptive.input_from(batch, x_hat.view())?;
        let delta = self.adaptive.delta(input.view(), adapt)?;
        Ok(x_hat + delta)
    }
}
