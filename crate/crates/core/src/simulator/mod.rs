//! Synthetic pump fleet: operating regimes, measurement maps, station and unit
//! differences, and injected seal faults with ground truth.

pub mod fault;
pub mod fleet;
pub mod unit;

pub use fault::{inject_fault, FaultSpec};
pub use fleet::{
    default_fleet, generate_fleet, simulate_fleet, zero_shift_fleet, FaultPlan, FleetConfig,
    FleetManifest, FleetUnit, ManifestUnit, NamedSpan, PlantModel, Relation, StationConfig,
    UnitRole, MANIFEST_FILE,
};
pub use unit::{
    measurement_map, pump_schema, simulate_clean, simulate_unit, DutyPoint, RegimeSchedule, Season,
    SensorSpec, SimulatedUnit, UnitConfig, CONTROLS, MEASUREMENTS, PUMP_SENSORS,
};
