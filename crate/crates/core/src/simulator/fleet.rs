use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fault::FaultSpec;
use super::unit::{
    pump_schema, simulate_unit, DutyPoint, RegimeSchedule, Season, SimulatedUnit, UnitConfig,
    CONTROLS, MEASUREMENTS,
};
use crate::data::{NamedRange, SplitPlan, TimeRange, VariableSchema};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitRole {
    Source,
    Target,
}

/// How a unit relates to the source unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    Source,
    IntraStation,
    CrossStation,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Source => "source",
            Relation::IntraStation => "intra-station",
            Relation::CrossStation => "cross-station",
        })
    }
}

/// Installation-wide differences shared by every unit of a station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    pub id: String,
    /// Added to the measurement offset, 8 entries.
    pub offset: Vec<f64>,
    /// Added to the control channels, 6 entries.
    pub control_offset: Vec<f64>,
}

/// Measurement map and noise shared by the whole fleet before station and
/// unit differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub gain: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub quadratic: Vec<f64>,
    pub drift_per_year: Vec<f64>,
    pub noise: f64,
    pub control_noise: f64,
    pub missing_rate: f64,
    /// Control vector at which a unit's gain change has no effect; unit
    /// gains are matched there and diverge away from it.
    pub reference_controls: Vec<f64>,
}

/// Day range relative to the fleet start, `[from, to)`.
pub type DaySpan = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSpan {
    pub name: String,
    pub days: DaySpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub kind: String,
    pub onset_day: f64,
    pub ramp_days: f64,
    pub channels: Vec<String>,
    pub severity: f64,
    pub detection_lag_days: f64,
    pub maintenance_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetUnit {
    pub id: String,
    pub station: String,
    pub role: UnitRole,
    pub duration_days: f64,
    /// Unit-specific change of the gain matrix; empty means none.
    #[serde(default)]
    pub gain_shift: Vec<Vec<f64>>,
    /// Unit-specific measurement offset; empty means none.
    #[serde(default)]
    pub offset_shift: Vec<f64>,
    /// Replaces the fleet schedule for this unit.
    #[serde(default)]
    pub schedule: Option<RegimeSchedule>,
    pub train_days: DaySpan,
    pub validation_days: DaySpan,
    #[serde(default)]
    pub test_days: Vec<NamedSpan>,
    #[serde(default)]
    pub faults: Vec<FaultPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub cadence_minutes: i64,
    #[serde(default = "crate::data::split::default_exclusion_days")]
    pub exclusion_days: i64,
    pub schedule: RegimeSchedule,
    pub plant: PlantModel,
    pub stations: Vec<StationConfig>,
    pub units: Vec<FleetUnit>,
}

/// Ground truth and file index for one simulated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestUnit {
    pub id: String,
    pub station: String,
    pub role: UnitRole,
    pub relation: Relation,
    /// CSV file name, relative to the manifest.
    pub file: String,
    pub split: SplitPlan,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetManifest {
    pub seed: u64,
    pub cadence_minutes: i64,
    pub schema: VariableSchema,
    pub units: Vec<ManifestUnit>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl FleetManifest {
    pub fn unit(&self, id: &str) -> Result<&ManifestUnit> {
        self.units
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| Error::config(format!("unit `{id}` is not in the manifest")))
    }

    pub fn source(&self) -> Result<&ManifestUnit> {
        self.units
            .iter()
            .find(|u| u.role == UnitRole::Source)
            .ok_or_else(|| Error::config("manifest has no source unit"))
    }

    pub fn targets(&self) -> impl Iterator<Item = &ManifestUnit> {
        self.units.iter().filter(|u| u.role == UnitRole::Target)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("encoding manifest: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))?;
        m.schema.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

fn day_offset(start: DateTime<Utc>, day: f64) -> DateTime<Utc> {
    start + Duration::milliseconds((day * 86_400_000.0).round() as i64)
}

fn span(start: DateTime<Utc>, d: DaySpan) -> Result<TimeRange> {
    TimeRange::new(day_offset(start, d[0]), day_offset(start, d[1]))
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::config(format!(
            "{what} needs {n} entries, got {}",
            v.len()
        )));
    }
    Ok(())
}

fn add_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if b.is_empty() {
        return a.to_vec();
    }
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    if b.is_empty() {
        return a.to_vec();
    }
    if a.is_empty() {
        return b.to_vec();
    }
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.stations {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::config(format!(
                    "station `{}` is defined twice",
                    s.id
                )));
            }
            check_len(
                &format!("station `{}` offset", s.id),
                &s.offset,
                MEASUREMENTS,
            )?;
            check_len(
                &format!("station `{}` control_offset", s.id),
                &s.control_offset,
                CONTROLS,
            )?;
        }
        check_len(
            "reference_controls",
            &self.plant.reference_controls,
            CONTROLS,
        )?;
        let mut units = BTreeSet::new();
        for u in &self.units {
            if !ids.contains(u.station.as_str()) {
                return Err(Error::config(format!(
                    "unit `{}` refers to unknown station `{}`",
                    u.id, u.station
                )));
            }
            if !units.insert(u.id.as_str()) {
                return Err(Error::config(format!("unit `{}` is defined twice", u.id)));
            }
            if !u.gain_shift.is_empty()
                && (u.gain_shift.len() != MEASUREMENTS
                    || u.gain_shift.iter().any(|r| r.len() != CONTROLS))
            {
                return Err(Error::config(format!(
                    "unit `{}`: gain_shift must be 8 x 6",
                    u.id
                )));
            }
            if !u.offset_shift.is_empty() {
                check_len(
                    &format!("unit `{}` offset_shift", u.id),
                    &u.offset_shift,
                    MEASUREMENTS,
                )?;
            }
        }
        let sources = self
            .units
            .iter()
            .filter(|u| u.role == UnitRole::Source)
            .count();
        if sources != 1 {
            return Err(Error::config(format!(
                "fleet needs exactly one source unit, found {sources}"
            )));
        }
        if !self.units.iter().any(|u| u.role == UnitRole::Target) {
            return Err(Error::config("fleet needs at least one target unit"));
        }
        for (i, u) in self.units.iter().enumerate() {
            self.unit_config(i)?.validate()?;
            self.split_plan(u)?.validate()?;
        }
        Ok(())
    }

    fn source(&self) -> &FleetUnit {
        self.units
            .iter()
            .find(|u| u.role == UnitRole::Source)
            .expect("validated fleet has a source")
    }

    fn station(&self, id: &str) -> Result<&StationConfig> {
        self.stations
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::config(format!("unknown station `{id}`")))
    }

    pub fn relation(&self, unit: &FleetUnit) -> Relation {
        match unit.role {
            UnitRole::Source => Relation::Source,
            UnitRole::Target if unit.station == self.source().station => Relation::IntraStation,
            UnitRole::Target => Relation::CrossStation,
        }
    }

    fn faults(&self, unit: &FleetUnit) -> Vec<FaultSpec> {
        unit.faults
            .iter()
            .map(|f| FaultSpec {
                kind: f.kind.clone(),
                onset: day_offset(self.start, f.onset_day),
                ramp_days: f.ramp_days,
                channels: f.channels.clone(),
                severity: f.severity,
                detection_lag_days: f.detection_lag_days,
                maintenance_days: f.maintenance_days,
            })
            .collect()
    }

    fn split_plan(&self, unit: &FleetUnit) -> Result<SplitPlan> {
        let tests = unit
            .test_days
            .iter()
            .map(|t| {
                Ok(NamedRange {
                    name: t.name.clone(),
                    range: span(self.start, t.days)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitPlan {
            train: span(self.start, unit.train_days)?,
            validation: span(self.start, unit.validation_days)?,
            tests,
            reported_faults: self.faults(unit).iter().map(|f| f.reported()).collect(),
            exclusion_days: self.exclusion_days,
        })
    }

    /// Fully resolved generator settings for the `index`-th unit.
    pub fn unit_config(&self, index: usize) -> Result<UnitConfig> {
        let u = self
            .units
            .get(index)
            .ok_or_else(|| Error::config(format!("no unit at index {index}")))?;
        let st = self.station(&u.station)?;
        let p = &self.plant;
        Ok(UnitConfig {
            id: u.id.clone(),
            station: u.station.clone(),
            start: self.start,
            duration_days: u.duration_days,
            cadence_minutes: self.cadence_minutes,
            schedule: u.schedule.clone().unwrap_or_else(|| self.schedule.clone()),
            gain: add_matrix(&p.gain, &u.gain_shift),
            offset: add_vec(
                &add_vec(&p.offset, &st.offset),
                &add_vec(&u.offset_shift, &self.pivot(u)),
            ),
            quadratic: p.quadratic.clone(),
            control_offset: st.control_offset.clone(),
            drift_per_year: p.drift_per_year.clone(),
            noise: p.noise,
            control_noise: p.control_noise,
            missing_rate: p.missing_rate,
            faults: self.faults(u),
        })
    }

    /// Offset that cancels the unit's gain change at the reference controls.
    fn pivot(&self, u: &FleetUnit) -> Vec<f64> {
        if u.gain_shift.is_empty() {
            return Vec::new();
        }
        u.gain_shift
            .iter()
            .map(|r| {
                -r.iter()
                    .zip(&self.plant.reference_controls)
                    .map(|(g, w)| g * w)
                    .sum::<f64>()
            })
            .collect()
    }

    /// Random stream of the `index`-th unit, independent of the other units.
    pub fn unit_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng
    }

    pub fn manifest(&self) -> Result<FleetManifest> {
        self.validate()?;
        let units = self
            .units
            .iter()
            .map(|u| {
                Ok(ManifestUnit {
                    id: u.id.clone(),
                    station: u.station.clone(),
                    role: u.role,
                    relation: self.relation(u),
                    file: format!("{}.csv", u.id),
                    split: self.split_plan(u)?,
                    faults: self.faults(u),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FleetManifest {
            seed: self.seed,
            cadence_minutes: self.cadence_minutes,
            schema: pump_schema(),
            units,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::config(format!("fleet config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("encoding fleet config: {e}")))
    }
}

/// Generates every unit in memory, in manifest order.
pub fn generate_fleet(cfg: &FleetConfig) -> Result<(FleetManifest, Vec<SimulatedUnit>)> {
    let manifest = cfg.manifest()?;
    let units = (0..cfg.units.len())
        .map(|i| simulate_unit(&cfg.unit_config(i)?, &mut cfg.unit_rng(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, units))
}

/// Writes one CSV per unit plus the manifest into `dir`.
pub fn simulate_fleet(cfg: &FleetConfig, dir: &Path) -> Result<FleetManifest> {
    let (manifest, units) = generate_fleet(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (m, u) in manifest.units.iter().zip(&units) {
        let path: PathBuf = dir.join(&m.file);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        u.write_csv(std::io::BufWriter::new(file))?;
    }
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

const PLANT_GAIN: [[f64; CONTROLS]; MEASUREMENTS] = [
    // flow, speed, suction, case, head, power
    [0.05, 0.10, 0.20, 0.35, 0.00, 0.00],
    [0.00, -0.15, -0.30, 0.00, -0.10, 0.00],
    [0.05, 0.25, 0.00, 0.00, 0.00, 0.20],
    [0.00, -0.20, 0.00, 0.00, 0.00, -0.15],
    [0.05, 0.10, 0.25, 0.30, 0.00, 0.00],
    [0.00, -0.10, -0.25, 0.00, -0.15, 0.00],
    [0.05, 0.20, 0.00, 0.00, 0.05, 0.20],
    [0.00, -0.15, 0.00, 0.00, 0.00, -0.20],
];

fn plant() -> PlantModel {
    PlantModel {
        gain: PLANT_GAIN.iter().map(|r| r.to_vec()).collect(),
        offset: vec![0.15, 0.75, 0.15, 0.6, 0.15, 0.7, 0.15, 0.6],
        quadratic: vec![0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.1, 0.0],
        drift_per_year: vec![0.0; MEASUREMENTS],
        noise: 0.01,
        control_noise: 0.005,
        missing_rate: 0.001,
        reference_controls: vec![0.275, 0.375, 0.39, 0.38, 0.31, 0.18],
    }
}

/// Gain change confined to the secondary (inverse-acting) seal channels:
/// the barrier-side pressures respond to speed and head, the secondary
/// temperatures to speed and shaft power.
fn gain_shift(pressure: f64, thermal: f64) -> Vec<Vec<f64>> {
    (0..MEASUREMENTS)
        .map(|j| {
            let mut r = vec![0.0; CONTROLS];
            match j {
                1 | 5 => {
                    r[1] = pressure;
                    r[4] = pressure;
                }
                3 | 7 => {
                    r[1] = thermal;
                    r[5] = thermal;
                }
                _ => {}
            }
            r
        })
        .collect()
}

fn fault(kind: &str, onset_day: f64, channels: &[&str], severity: f64) -> FaultPlan {
    FaultPlan {
        kind: kind.into(),
        onset_day,
        ramp_days: 8.0,
        channels: channels.iter().map(|c| c.to_string()).collect(),
        severity,
        detection_lag_days: 10.0,
        maintenance_days: 5.0,
    }
}

const PRIMARY: [&str; 2] = ["de_seal_pressure", "de_seal_pressure_secondary"];
const SECONDARY: [&str; 2] = ["nde_seal_temperature", "nde_seal_temperature_secondary"];

fn target(id: &str, station: &str, pressure: f64, thermal: f64) -> FleetUnit {
    FleetUnit {
        id: id.into(),
        station: station.into(),
        role: UnitRole::Target,
        duration_days: 480.0,
        gain_shift: gain_shift(pressure, thermal),
        offset_shift: Vec::new(),
        schedule: None,
        train_days: [0.0, 90.0],
        validation_days: [90.0, 120.0],
        test_days: vec![NamedSpan {
            name: "normal".into(),
            days: [120.0, 230.0],
        }],
        faults: vec![
            fault("primary-seal-drift", 290.0, &PRIMARY, 0.15),
            fault("secondary-seal-drift", 440.0, &SECONDARY, 0.15),
        ],
    }
}

/// Shift-length duty blocks, except for a quieter season of rapid cycling
/// between duty points.
fn fleet_schedule() -> RegimeSchedule {
    RegimeSchedule {
        duties: vec![
            DutyPoint {
                load: [0.2, 0.35],
                speed: [0.3, 0.45],
            },
            DutyPoint {
                load: [0.7, 0.85],
                speed: [0.75, 0.9],
            },
        ],
        dwell_hours: [15.0, 17.0],
        drift_per_day: 0.005,
        tank_walk: 0.02,
        seasons: vec![Season {
            start_day: 230.0,
            end_day: 480.0,
            dwell_hours: [1.0, 3.0],
        }],
        ..RegimeSchedule::default()
    }
}

/// One source unit and four targets: two at the source's station, two at a
/// second station with its own offsets.
pub fn default_fleet(seed: u64) -> FleetConfig {
    let start = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
    let source = FleetUnit {
        id: "B-C".into(),
        station: "B".into(),
        role: UnitRole::Source,
        duration_days: 730.0,
        gain_shift: Vec::new(),
        offset_shift: Vec::new(),
        schedule: None,
        train_days: [0.0, 365.0],
        validation_days: [365.0, 730.0],
        test_days: Vec::new(),
        faults: Vec::new(),
    };
    FleetConfig {
        seed,
        start,
        cadence_minutes: 30,
        exclusion_days: crate::data::split::default_exclusion_days(),
        schedule: fleet_schedule(),
        plant: plant(),
        stations: vec![
            StationConfig {
                id: "A".into(),
                offset: (0..MEASUREMENTS)
                    .map(|j| if j % 2 == 1 { 0.08 } else { 0.0 })
                    .collect(),
                control_offset: vec![0.0; CONTROLS],
            },
            StationConfig {
                id: "B".into(),
                offset: vec![0.0; MEASUREMENTS],
                control_offset: vec![0.0; CONTROLS],
            },
        ],
        units: vec![
            source,
            target("B-B", "B", 0.30, 0.30),
            target("B-D", "B", 0.35, 0.25),
            target("A-A", "A", 0.40, 0.30),
            target("A-C", "A", 0.30, 0.40),
        ],
    }
}

/// The default fleet with every station and unit difference removed.
pub fn zero_shift_fleet(seed: u64) -> FleetConfig {
    let mut cfg = default_fleet(seed);
    for s in &mut cfg.stations {
        s.offset = vec![0.0; MEASUREMENTS];
        s.control_offset = vec![0.0; CONTROLS];
    }
    for u in &mut cfg.units {
        u.gain_shift.clear();
        u.offset_shift.clear();
    }
    cfg
}
