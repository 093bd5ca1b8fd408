use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{batch_ranges, Autoencoder, TaadModel};
use crate::nn::BnMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    #[serde(rename = "adabn")]
    AdaBn,
    Mmd,
    Taad,
}

impl Variant {
    /// Report column order.
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::AdaBn,
        Variant::Mmd,
        Variant::Taad,
    ];

    /// Lower-case tag used in file names and config.
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AdaBn => "adabn",
            Variant::Mmd => "mmd",
            Variant::Taad => "taad",
        }
    }

    /// Whether prediction uses batch statistics and so needs two or more rows.
    pub fn adapts_at_test_time(self) -> bool {
        matches!(self, Variant::AdaBn | Variant::Taad)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "Baseline",
            Variant::AdaBn => "AdaBN",
            Variant::Mmd => "MMD",
            Variant::Taad => "TAAD",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

/// A trained model wired to one prediction path.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    /// Source autoencoder, eval mode.
    Baseline(Autoencoder),
    /// Source autoencoder with encoder batchnorms re-estimated on every batch.
    AdaBn(Autoencoder),
    /// Autoencoder fine-tuned with the discrepancy penalty, eval mode.
    Mmd(Autoencoder),
    /// Frozen autoencoder plus adaptive module in adapt mode.
    Taad(TaadModel),
}

impl Detector {
    pub fn variant(&self) -> Variant {
        match self {
            Detector::Baseline(_) => Variant::Baseline,
            Detector::AdaBn(_) => Variant::AdaBn,
            Detector::Mmd(_) => Variant::Mmd,
            Detector::Taad(_) => Variant::Taad,
        }
    }

    pub fn autoencoder(&self) -> &Autoencoder {
        match self {
            Detector::Baseline(ae) | Detector::AdaBn(ae) | Detector::Mmd(ae) => ae,
            Detector::Taad(m) => &m.ae,
        }
    }

    pub fn width(&self) -> usize {
        self.autoencoder().width()
    }

    /// Reconstruction of one scaled `[x, w]` batch.
    pub fn predict(&mut self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.variant().adapts_at_test_time() && batch.nrows() < 2 {
            return Err(Error::BatchTooSmall {
                mode: "adapt",
                rows: batch.nrows(),
            });
        }
        match self {
            Detector::Baseline(ae) | Detector::Mmd(ae) => ae.reconstruct_eval(batch),
            Detector::AdaBn(ae) => ae.reconstruct(batch, BnMode::Adapt),
            Detector::Taad(m) => m.predict(batch, true),
        }
    }

    /// Predicts a whole series in consecutive batches of `batch_size` rows,
    /// in time order. A trailing single row joins the previous batch.
    pub fn predict_stream(
        &mut self,
        data: ArrayView2<f64>,
        batch_size: usize,
    ) -> Result<Array2<f64>> {
        if batch_size < 2 {
            return Err(Error::config("test batch size must be at least 2"));
        }
        let mut out = Array2::zeros((data.nrows(), self.width()));
        for r in batch_ranges(data.nrows(), batch_size) {
            let pred = self.predict(data.slice(s![r.clone(), ..]))?;
            out.slice_mut(s![r, ..]).assign(&pred);
        }
        Ok(out)
    }
}
