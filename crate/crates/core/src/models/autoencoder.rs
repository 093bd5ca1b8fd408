use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{block, Archive, BnMode, LayerSpec, NamedTensor, Network};

pub const HIDDEN_WIDTH: usize = 50;
pub const LATENT_WIDTH: usize = 10;

/// Reconstruction network: encoder `k -> 50 -> 50 -> 10`, each dense layer
/// followed by batch normalization and ReLU; decoder `10 -> 50 -> 50 -> k`
/// with ReLU after the first two layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
}

/// Running statistics of every encoder batchnorm, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct BnSnapshot(pub Vec<(Array1<f64>, Array1<f64>, bool)>);

pub fn encoder_specs(k: usize) -> Vec<LayerSpec> {
    let mut s = block(k, HIDDEN_WIDTH, true, true);
    s.extend(block(HIDDEN_WIDTH, HIDDEN_WIDTH, true, true));
    s.extend(block(HIDDEN_WIDTH, LATENT_WIDTH, true, true));
    s
}

pub fn decoder_specs(k: usize) -> Vec<LayerSpec> {
    let mut s = block(LATENT_WIDTH, HIDDEN_WIDTH, false, true);
    s.extend(block(HIDDEN_WIDTH, HIDDEN_WIDTH, false, true));
    s.extend(block(HIDDEN_WIDTH, k, false, false));
    s
}

impl Autoencoder {
    pub fn build(k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("autoencoder input width must be at least 1"));
        }
        Ok(Self {
            encoder: Network::new(encoder_specs(k), seed)?,
            decoder: Network::new(decoder_specs(k), seed ^ 0x9E37_79B9_7F4A_7C15)?,
        })
    }

    pub fn width(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Layer widths from input to output, e.g. `[14, 50, 50, 10, 50, 50, 14]`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.width()];
        w.extend(self.encoder.dense_layers().map(|d| d.out_dim()));
        w.extend(self.decoder.dense_layers().map(|d| d.out_dim()));
        w
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.encoder.set_frozen(frozen);
        self.decoder.set_frozen(frozen);
    }

    /// Eval-mode reconstruction. Pure.
    pub fn reconstruct_eval(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.encoder.forward_eval(batch)?;
        self.decoder.forward_eval(z.view())
    }

    /// Reconstruction with the encoder batchnorms in `mode`.
    pub fn reconstruct(&mut self, batch: ArrayView2<f64>, mode: BnMode) -> Result<Array2<f64>> {
        match mode {
            BnMode::Eval => self.reconstruct_eval(batch),
            BnMode::Adapt => {
                let z = self.encoder.forward(batch, BnMode::Adapt)?;
                self.decoder.forward_eval(z.view())
            }
            BnMode::Train => Err(Error::config(
                "reconstruct runs in eval or adapt mode; training uses the trainer",
            )),
        }
    }

    pub fn encode_eval(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward_eval(batch)
    }

    pub fn bn_snapshot(&self) -> BnSnapshot {
        BnSnapshot(
            self.encoder
                .batchnorms()
                .map(|bn| {
                    (
                        bn.running_mean.clone(),
                        bn.running_var.clone(),
                        bn.populated,
                    )
                })
                .collect(),
        )
    }

    pub fn restore_bn(&mut self, snap: &BnSnapshot) {
        for (bn, (m, v, p)) in self.encoder.batchnorms_mut().zip(&snap.0) {
            bn.running_mean = m.clone();
            bn.running_var = v.clone();
            bn.populated = *p;
        }
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut t = self.encoder.to_tensors("ae.encoder");
        t.extend(self.decoder.to_tensors("ae.decoder"));
        t
    }

    pub fn from_archive(k: usize, archive: &Archive) -> Result<Self> {
        Ok(Self {
            encoder: Network::from_archive(encoder_specs(k), archive, "ae.encoder")?,
            decoder: Network::from_archive(decoder_specs(k), archive, "ae.decoder")?,
        })
    }

    /// Byte image of every autoencoder parameter and running statistic.
    pub fn to_bytes(&self) -> Vec<u8> {
        Archive::new(String::new(), self.to_tensors()).to_bytes()
    }
}
