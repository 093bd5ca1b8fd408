use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Sensor reading that reflects component health (`x`).
    Measurement,
    /// Operator- or controller-set variable that defines the operating regime (`w`).
    Control,
    /// Present in files but never fed to a model.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

/// Ordered channel list with roles. Model columns are laid out as `[x, w]`,
/// each group in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub channels: Vec<Channel>,
}

impl VariableSchema {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        let schema = Self { channels };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.channels {
            if c.name.is_empty() {
                return Err(Error::Schema("empty channel name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate channel `{}`", c.name)));
            }
        }
        if self.measurements().next().is_none() {
            return Err(Error::Schema(
                "schema needs at least one measurement channel".into(),
            ));
        }
        if self.controls().next().is_none() {
            return Err(Error::Schema(
                "schema needs at least one control channel".into(),
            ));
        }
        Ok(())
    }

    pub fn measurements(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.role == Role::Measurement)
    }

    pub fn controls(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.role == Role::Control)
    }

    pub fn measurement_count(&self) -> usize {
        self.measurements().count()
    }

    pub fn control_count(&self) -> usize {
        self.controls().count()
    }

    /// Model input width `|x| + |w|`.
    pub fn model_width(&self) -> usize {
        self.measurement_count() + self.control_count()
    }

    /// Channel names in model column order `[x, w]`.
    pub fn model_columns(&self) -> Vec<&str> {
        self.measurements()
            .chain(self.controls())
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.model_columns().iter().position(|c| *c == name)
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout {
            measurements: self.measurement_count(),
            controls: self.control_count(),
        }
    }
}

/// Column split of a model matrix: measurements first, then controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub measurements: usize,
    pub controls: usize,
}

impl ChannelLayout {
    pub fn width(&self) -> usize {
        self.measurements + self.controls
    }

    pub fn control_range(&self) -> std::ops::Range<usize> {
        self.measurements..self.width()
    }
}
