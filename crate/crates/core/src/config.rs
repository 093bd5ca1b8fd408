//! Run configuration: one TOML file drives every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{MmdConfig, Variant};
use crate::error::{Error, Result};
use crate::models::{AdaptiveOptions, TrainConfig};
use crate::scoring::{ALPHA_CROSS_STATION, ALPHA_INTRA_STATION, DEFAULT_WINDOW};
use crate::simulator::{default_fleet, zero_shift_fleet, FleetConfig, Relation};

/// Where inputs and artifacts live. Relative paths are taken relative to the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Unit CSV files plus `manifest.toml`.
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            outputs: "outputs".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FleetPreset {
    Default,
    ZeroShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub preset: FleetPreset,
    /// Fleet description file; overrides the preset when set.
    pub fleet: Option<PathBuf>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            preset: FleetPreset::Default,
            fleet: None,
        }
    }
}

/// Test-time settings shared by every variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Consecutive rows per prediction call; sets the adapt-mode statistics.
    pub batch_size: usize,
    /// Smoothing window in samples.
    pub window: usize,
    pub alpha_intra_station: f64,
    pub alpha_cross_station: f64,
    /// A day is abnormal when more than this many samples are.
    pub day_threshold: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            window: DEFAULT_WINDOW,
            alpha_intra_station: ALPHA_INTRA_STATION,
            alpha_cross_station: ALPHA_CROSS_STATION,
            day_threshold: 0,
        }
    }
}

impl DetectConfig {
    pub fn alpha(&self, relation: Relation) -> f64 {
        match relation {
            Relation::CrossStation => self.alpha_cross_station,
            Relation::Source | Relation::IntraStation => self.alpha_intra_station,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("detect.batch_size must be at least 2"));
        }
        if self.window == 0 {
            return Err(Error::config("detect.window must be at least 1"));
        }
        if !(self.alpha_intra_station > 0.0 && self.alpha_cross_station > 0.0) {
            return Err(Error::config("alpha values must be positive"));
        }
        Ok(())
    }
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn adapt_training() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 120,
        patience: 20,
        shuffle: false,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed. Simulation, initialisation and batch order derive from it.
    pub seed: u64,
    pub paths: Paths,
    pub simulate: SimulateSection,
    /// Source autoencoder training.
    pub train: TrainConfig,
    /// Target-side training: adaptive module and MMD fine-tuning.
    pub adapt: TrainConfig,
    pub adaptive: AdaptiveOptions,
    pub mmd: MmdConfig,
    pub detect: DetectConfig,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            paths: Paths::default(),
            simulate: SimulateSection::default(),
            train: TrainConfig::default(),
            adapt: adapt_training(),
            adaptive: AdaptiveOptions::default(),
            mmd: MmdConfig::default(),
            detect: DetectConfig::default(),
            variants: default_variants(),
        }
    }
}

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.adapt.validate()?;
        self.mmd.validate()?;
        self.detect.validate()?;
        if self.variants.is_empty() {
            return Err(Error::config("no variants selected"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("encoding run config: {e}")))
    }

    /// Reads a config file, rebases its relative paths on the file's
    /// directory and applies an optional seed override.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg.resolved())
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.data);
        fix(&mut self.paths.checkpoints);
        fix(&mut self.paths.outputs);
        if let Some(f) = &mut self.simulate.fleet {
            fix(f);
        }
    }

    /// Copy with every derived seed filled in from the master seed.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self.adapt.seed = self.seed.wrapping_add(1);
        self.variants.sort();
        self.variants.dedup();
        self
    }

    /// Writes the resolved config into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn fleet(&self) -> Result<FleetConfig> {
        match &self.simulate.fleet {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::config(format!("cannot read fleet file {}: {e}", p.display()))
                })?;
                let mut f = FleetConfig::from_toml(&text)?;
                f.seed = self.seed;
                Ok(f)
            }
            None => Ok(match self.simulate.preset {
                FleetPreset::Default => default_fleet(self.seed),
                FleetPreset::ZeroShift => zero_shift_fleet(self.seed),
            }),
        }
    }
}
