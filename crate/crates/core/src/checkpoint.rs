//! On-disk bundle of everything a detector needs: networks, scaler, schema
//! and the seeds that produced them.

use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::adaptation::{Detector, Variant};
use crate::data::{MinMaxScaler, VariableSchema};
use crate::error::{Error, Result};
use crate::models::{AdaptiveModule, AdaptiveOptions, Autoencoder, TaadModel};
use crate::nn::{Archive, NamedTensor};
use crate::scoring::{ResidualScaler, ThresholdBase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub schema: VariableSchema,
    pub seed: u64,
    /// Unit whose data the parameters were last fitted on.
    pub unit: String,
    #[serde(default)]
    pub adaptive_options: Option<AdaptiveOptions>,
    #[serde(default)]
    pub mmd_sigma: Option<f64>,
    #[serde(default)]
    pub threshold: Option<ThresholdBase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub meta: CheckpointMeta,
    pub ae: Autoencoder,
    pub adaptive: Option<AdaptiveModule>,
    pub scaler: MinMaxScaler,
    pub residual_scaler: Option<ResidualScaler>,
}

impl ModelCheckpoint {
    pub fn to_archive(&self) -> Result<Archive> {
        let meta = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Format(format!("encoding checkpoint metadata: {e}")))?;
        let mut t = self.ae.to_tensors();
        if let Some(h) = &self.adaptive {
            t.extend(h.to_tensors());
        }
        t.push(NamedTensor::from_array1("scaler.min", &self.scaler.min));
        t.push(NamedTensor::from_array1("scaler.max", &self.scaler.max));
        if let Some(r) = &self.residual_scaler {
            t.push(NamedTensor::from_array1("residual.xbar", r.xbar()));
        }
        Ok(Archive::new(meta, t))
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&archive.meta)
            .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        meta.schema.validate()?;
        let k = meta.schema.model_width();
        let ae = Autoencoder::from_archive(k, archive)?;
        let adaptive = match meta.adaptive_options {
            Some(opts) => Some(AdaptiveModule::from_archive(
                meta.schema.layout(),
                opts,
                archive,
            )?),
            None => None,
        };
        if meta.variant == Variant::Taad && adaptive.is_none() {
            return Err(Error::Format(
                "TAAD checkpoint lacks an adaptive module".into(),
            ));
        }
        let scaler = MinMaxScaler::from_parts(
            archive.array1("scaler.min", k)?,
            archive.array1("scaler.max", k)?,
        )?;
        let residual_scaler = if archive.contains("residual.xbar") {
            Some(ResidualScaler::new(archive.array1("residual.xbar", k)?)?)
        } else {
            None
        };
        Ok(Self {
            meta,
            ae,
            adaptive,
            scaler,
            residual_scaler,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.to_archive()?.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_archive(&Archive::from_bytes(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// The detector this checkpoint describes.
    pub fn detector(&self) -> Result<Detector> {
        let ae = self.ae.clone();
        Ok(match self.meta.variant {
            Variant::Baseline => Detector::Baseline(ae),
            Variant::AdaBn => Detector::AdaBn(ae),
            Variant::Mmd => Detector::Mmd(ae),
            Variant::Taad => {
                let h = self
                    .adaptive
                    .clone()
                    .ok_or_else(|| Error::state("TAAD checkpoint lacks an adaptive module"))?;
                Detector::Taad(TaadModel::new(ae, h)?)
            }
        })
    }

    pub fn xbar(&self) -> Option<&Array1<f64>> {
        self.residual_scaler.as_ref().map(|r| r.xbar())
    }
}
