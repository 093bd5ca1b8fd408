use chrono::{DateTime, Duration, Utc};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fault::{inject_fault, FaultSpec};
use crate::data::{write_table, Channel, Role, TimeSeriesDataset, VariableSchema};
use crate::error::{Error, Result};

pub const MEASUREMENTS: usize = 8;
pub const CONTROLS: usize = 6;

/// One simulated sensor: its role and how the simulator's normalized value
/// maps to engineering units (`lo + span * v`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub name: &'static str,
    pub role: Role,
    pub unit: &'static str,
    pub lo: f64,
    pub span: f64,
}

const fn sensor(
    name: &'static str,
    role: Role,
    unit: &'static str,
    lo: f64,
    span: f64,
) -> SensorSpec {
    SensorSpec {
        name,
        role,
        unit,
        lo,
        span,
    }
}

/// Seal measurements, performance controls and two seal-level channels that
/// are carried in the files but not modelled.
pub const PUMP_SENSORS: [SensorSpec; 16] = [
    sensor("de_seal_pressure", Role::Measurement, "bar", 2.0, 18.0),
    sensor(
        "de_seal_pressure_secondary",
        Role::Measurement,
        "bar",
        0.5,
        6.0,
    ),
    sensor("de_seal_temperature", Role::Measurement, "degC", 20.0, 60.0),
    sensor(
        "de_seal_temperature_secondary",
        Role::Measurement,
        "degC",
        15.0,
        45.0,
    ),
    sensor("nde_seal_pressure", Role::Measurement, "bar", 2.0, 18.0),
    sensor(
        "nde_seal_pressure_secondary",
        Role::Measurement,
        "bar",
        0.5,
        6.0,
    ),
    sensor(
        "nde_seal_temperature",
        Role::Measurement,
        "degC",
        20.0,
        60.0,
    ),
    sensor(
        "nde_seal_temperature_secondary",
        Role::Measurement,
        "degC",
        15.0,
        45.0,
    ),
    sensor("flow", Role::Control, "m3/h", 100.0, 900.0),
    sensor("speed", Role::Control, "rpm", 1000.0, 2600.0),
    sensor("suction_pressure", Role::Control, "bar", 1.0, 9.0),
    sensor("case_pressure", Role::Control, "bar", 5.0, 35.0),
    sensor("head", Role::Control, "m", 50.0, 350.0),
    sensor("shaft_power", Role::Control, "kW", 50.0, 950.0),
    sensor("de_seal_level", Role::Excluded, "%", 20.0, 70.0),
    sensor("nde_seal_level", Role::Excluded, "%", 20.0, 70.0),
];

pub fn pump_schema() -> VariableSchema {
    VariableSchema::new(
        PUMP_SENSORS
            .iter()
            .map(|s| Channel {
                name: s.name.to_string(),
                role: s.role,
                unit: Some(s.unit.to_string()),
            })
            .collect(),
    )
    .expect("built-in pump schema is valid")
}

/// One operating point the operators run the unit at; each visit draws a
/// setpoint uniformly from these ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyPoint {
    pub load: [f64; 2],
    pub speed: [f64; 2],
}

/// Overrides the dwell time for setpoints chosen in `[start_day, end_day)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Season {
    pub start_day: f64,
    pub end_day: f64,
    pub dwell_hours: [f64; 2],
}

/// Operator behaviour: the unit cycles through its duty points in order,
/// holding each setpoint for a random dwell time, on top of a daily demand
/// cycle and a slow random walk of the load level. All in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    pub duties: Vec<DutyPoint>,
    /// Hours spent at one duty point before moving to the next.
    pub dwell_hours: [f64; 2],
    /// Hours a setpoint is held before a new one is drawn from the same duty
    /// point.
    pub hold_hours: [f64; 2],
    #[serde(default)]
    pub seasons: Vec<Season>,
    pub daily_amplitude: f64,
    /// Standard deviation of the daily step of the load-level random walk.
    pub drift_per_day: f64,
    /// Pull of the load-level walk back to zero, per day.
    pub drift_reversion: f64,
    /// Daily standard deviation of the suction-tank level walk.
    pub tank_walk: f64,
}

impl Default for RegimeSchedule {
    fn default() -> Self {
        Self {
            duties: vec![
                DutyPoint {
                    load: [0.25, 0.45],
                    speed: [0.35, 0.6],
                },
                DutyPoint {
                    load: [0.65, 0.85],
                    speed: [0.65, 0.9],
                },
            ],
            dwell_hours: [3.0, 12.0],
            hold_hours: [1.0, 3.0],
            seasons: Vec::new(),
            daily_amplitude: 0.03,
            drift_per_day: 0.01,
            drift_reversion: 0.05,
            tank_walk: 0.05,
        }
    }
}

impl RegimeSchedule {
    fn dwell(&self, day: f64) -> [f64; 2] {
        self.seasons
            .iter()
            .find(|s| day >= s.start_day && day < s.end_day)
            .map_or(self.dwell_hours, |s| s.dwell_hours)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitConfig {
    pub id: String,
    pub station: String,
    pub start: DateTime<Utc>,
    pub duration_days: f64,
    pub cadence_minutes: i64,
    pub schedule: RegimeSchedule,
    /// Measurement gain matrix, `MEASUREMENTS` rows by `CONTROLS` columns.
    pub gain: Vec<Vec<f64>>,
    /// Measurement offset, including any station offset.
    pub offset: Vec<f64>,
    /// Per-measurement coefficient of the centred squared load.
    pub quadratic: Vec<f64>,
    /// Additive offset on the control channels.
    pub control_offset: Vec<f64>,
    /// Linear measurement drift per 365 days.
    pub drift_per_year: Vec<f64>,
    pub noise: f64,
    pub control_noise: f64,
    /// Probability that any single reading is absent.
    pub missing_rate: f64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl UnitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("unit `{}`: {m}", self.id)));
        if self.gain.len() != MEASUREMENTS || self.gain.iter().any(|r| r.len() != CONTROLS) {
            return bad("gain must be 8 x 6");
        }
        if self.offset.len() != MEASUREMENTS
            || self.quadratic.len() != MEASUREMENTS
            || self.drift_per_year.len() != MEASUREMENTS
        {
            return bad("offset, quadratic and drift_per_year need 8 entries");
        }
        if self.control_offset.len() != CONTROLS {
            return bad("control_offset needs 6 entries");
        }
        let finite = self
            .gain
            .iter()
            .flatten()
            .chain(&self.offset)
            .chain(&self.quadratic)
            .chain(&self.control_offset)
            .chain(&self.drift_per_year)
            .all(|v| v.is_finite());
        if !finite {
            return bad("measurement map entries must be finite");
        }
        if !(self.noise >= 0.0 && self.control_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)");
        }
        if self.cadence_minutes <= 0 {
            return bad("cadence must be positive");
        }
        let samples_per_day = 1440.0 / self.cadence_minutes as f64;
        if self.duration_days * samples_per_day < samples_per_day.max(1.0) {
            return bad("duration must cover at least one day of samples");
        }
        let s = &self.schedule;
        if !(s.drift_per_day >= 0.0 && s.tank_walk >= 0.0) {
            return bad("random-walk scales must be non-negative");
        }
        let ordered = |r: &[f64; 2]| r[0] <= r[1];
        let positive = |r: &[f64; 2]| r[0] > 0.0 && r[1] >= r[0];
        if !positive(&s.dwell_hours)
            || !positive(&s.hold_hours)
            || !s.seasons.iter().all(|x| positive(&x.dwell_hours))
        {
            return bad("dwell ranges must be positive and ordered");
        }
        if s.duties.is_empty()
            || !s
                .duties
                .iter()
                .all(|d| ordered(&d.load) && ordered(&d.speed))
        {
            return bad("need at least one duty point with ordered ranges");
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_days * 1440.0 / self.cadence_minutes as f64).round() as usize
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::minutes(self.cadence_minutes * i as i64)
    }
}

/// Operating factors over time: load and speed setpoints plus a slow
/// process-side factor (tank level feeding the suction).
struct Operating {
    load: Vec<f64>,
    speed: Vec<f64>,
    tank: Vec<f64>,
}

fn operate(cfg: &UnitConfig, n: usize, rng: &mut ChaCha8Rng) -> Operating {
    let s = &cfg.schedule;
    let dt_h = cfg.cadence_minutes as f64 / 60.0;
    let dt_d = dt_h / 24.0;
    let step = Normal::new(0.0, s.drift_per_day * dt_d.sqrt()).expect("finite std");
    let tank_step = Normal::new(0.0, s.tank_walk * dt_d.sqrt()).expect("finite std");
    let mut load = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut tank = Vec::with_capacity(n);
    let (mut sp_load, mut sp_speed) = (0.0, 0.0);
    let mut remaining = 0.0;
    let mut level = 0.0;
    let mut tk = 0.0f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut duty = rng.random_range(0..s.duties.len());
    let (mut current, mut held) = (0, 0.0);
    for i in 0..n {
        let day = i as f64 * dt_d;
        if remaining <= 0.0 {
            current = duty % s.duties.len();
            duty += 1;
            let dr = s.dwell(day);
            remaining = rng.random_range(dr[0]..=dr[1]);
            held = 0.0;
        }
        if held <= 0.0 {
            let d = &s.duties[current];
            sp_load = rng.random_range(d.load[0]..=d.load[1]);
            sp_speed = rng.random_range(d.speed[0]..=d.speed[1]);
            held = rng.random_range(s.hold_hours[0]..=s.hold_hours[1]);
        }
        held -= dt_h;
        remaining -= dt_h;
        level += -s.drift_reversion * dt_d * level + step.sample(rng);
        tk += -0.2 * dt_d * tk + tank_step.sample(rng);
        let cycle = s.daily_amplitude * (std::f64::consts::TAU * day + phase).sin();
        load.push(sp_load + level + cycle);
        speed.push(sp_speed);
        tank.push(tk);
    }
    Operating { load, speed, tank }
}

/// Control variables from the operating factors, normalized units.
fn controls(load: f64, speed: f64, tank: f64) -> [f64; CONTROLS] {
    let suction = 0.35 + 0.15 * load + 0.5 * tank;
    let head = 0.2 + 0.6 * speed * speed + 0.1 * load;
    let case = 0.5 * suction + 0.6 * head;
    let power = 0.1 + 0.75 * load * speed + 0.1 * speed * speed * speed;
    [load, speed, suction, case, head, power]
}

/// Noise-free and fault-free measurements for one control vector.
pub fn measurement_map(cfg: &UnitConfig, w: &[f64], load: f64, day: f64) -> [f64; MEASUREMENTS] {
    let mut x = [0.0; MEASUREMENTS];
    let centred = load - 0.5;
    for (j, xj) in x.iter_mut().enumerate() {
        let lin: f64 = cfg.gain[j].iter().zip(w).map(|(g, v)| g * v).sum();
        *xj = cfg.offset[j]
            + lin
            + cfg.quadratic[j] * centred * centred
            + cfg.drift_per_year[j] * day / 365.0;
    }
    x
}

#[derive(Debug, Clone)]
pub struct SimulatedUnit {
    /// Model channels `[x, w]` in engineering units.
    pub data: TimeSeriesDataset,
    /// Channels with the excluded role, in catalogue order.
    pub excluded: Array2<f64>,
    /// 1 where the unit is faulty, per row.
    pub health: Vec<u8>,
}

impl SimulatedUnit {
    /// Every catalogue channel, model columns first, as CSV.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let names: Vec<String> = PUMP_SENSORS.iter().map(|s| s.name.to_string()).collect();
        let all = ndarray::concatenate![ndarray::Axis(1), self.data.values, self.excluded];
        write_table(writer, &names, &self.data.timestamps, all.view())
    }
}

/// Generates one unit in normalized units before faults, missing values and
/// the engineering-unit mapping. Returns the model channels and the excluded
/// channels.
pub fn simulate_clean(
    cfg: &UnitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TimeSeriesDataset, Array2<f64>)> {
    cfg.validate()?;
    let n = cfg.sample_count();
    let op = operate(cfg, n, rng);
    let noise_x = Normal::new(0.0, cfg.noise).map_err(|e| Error::config(e.to_string()))?;
    let noise_w = Normal::new(0.0, cfg.control_noise).map_err(|e| Error::config(e.to_string()))?;
    let level_step = Normal::new(0.0, 0.01).expect("finite std");
    let dt_d = cfg.cadence_minutes as f64 / 1440.0;
    let mut values = Array2::zeros((n, MEASUREMENTS + CONTROLS));
    let mut excluded = Array2::zeros((n, 2));
    let mut levels = [0.5f64, 0.5];
    for i in 0..n {
        let day = i as f64 * dt_d;
        let mut w = controls(op.load[i], op.speed[i], op.tank[i]);
        for (v, o) in w.iter_mut().zip(&cfg.control_offset) {
            *v += o + noise_w.sample(rng);
        }
        let x = measurement_map(cfg, &w, op.load[i], day);
        let mut row = values.row_mut(i);
        for j in 0..MEASUREMENTS {
            row[j] = x[j] + noise_x.sample(rng);
        }
        for j in 0..CONTROLS {
            row[MEASUREMENTS + j] = w[j];
        }
        for (l, lvl) in levels.iter_mut().enumerate() {
            *lvl = (*lvl + level_step.sample(rng) - 0.05 * dt_d * (*lvl - 0.5)).clamp(0.0, 1.0);
            excluded[[i, l]] = *lvl;
        }
    }
    let timestamps = (0..n).map(|i| cfg.timestamp(i)).collect();
    Ok((
        TimeSeriesDataset::new(pump_schema(), timestamps, values)?,
        excluded,
    ))
}

/// Full unit: operating behaviour, measurement map, faults, missing readings,
/// engineering units.
pub fn simulate_unit(cfg: &UnitConfig, rng: &mut ChaCha8Rng) -> Result<SimulatedUnit> {
    let (mut data, mut excluded) = simulate_clean(cfg, rng)?;
    let mut health = vec![0u8; data.len()];
    for f in &cfg.faults {
        inject_fault(&mut data, &mut health, f)?;
    }
    let model = PUMP_SENSORS.iter().filter(|s| s.role != Role::Excluded);
    for (j, s) in model.enumerate() {
        data.values
            .column_mut(j)
            .mapv_inplace(|v| s.lo + s.span * v);
    }
    let dropped = PUMP_SENSORS.iter().filter(|s| s.role == Role::Excluded);
    for (j, s) in dropped.enumerate() {
        excluded.column_mut(j).mapv_inplace(|v| s.lo + s.span * v);
    }
    if cfg.missing_rate > 0.0 {
        for v in data.values.iter_mut() {
            if rng.random::<f64>() < cfg.missing_rate {
                *v = f64::NAN;
            }
        }
    }
    Ok(SimulatedUnit {
        data,
        excluded,
        health,
    })
}
