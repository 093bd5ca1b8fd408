use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesDataset;
use crate::error::{Error, Result};

/// A seal-like degradation: the affected channels ramp up linearly from the
/// onset, hold at `severity` and return to normal after maintenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Free-form tag such as `primary-seal-drift`.
    pub kind: String,
    pub onset: DateTime<Utc>,
    pub ramp_days: f64,
    pub channels: Vec<String>,
    /// Terminal offset, in the units of the dataset it is injected into.
    pub severity: f64,
    /// Days between onset and the date the operators report the fault.
    pub detection_lag_days: f64,
    /// Days after the report until the unit is repaired.
    pub maintenance_days: f64,
}

fn days(d: f64) -> Duration {
    Duration::milliseconds((d * 86_400_000.0).round() as i64)
}

impl FaultSpec {
    pub fn reported(&self) -> DateTime<Utc> {
        self.onset + days(self.detection_lag_days)
    }

    /// End of the faulty period (exclusive).
    pub fn repaired(&self) -> DateTime<Utc> {
        self.reported() + days(self.maintenance_days)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.severity >= 0.0 && self.severity.is_finite()) {
            return Err(Error::config(format!(
                "fault `{}`: severity must be >= 0",
                self.kind
            )));
        }
        if !(self.detection_lag_days >= 0.0
            && self.maintenance_days >= 0.0
            && self.ramp_days >= 0.0)
        {
            return Err(Error::config(format!(
                "fault `{}`: ramp, lag and maintenance must be non-negative",
                self.kind
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::config(format!(
                "fault `{}` names no channels",
                self.kind
            )));
        }
        Ok(())
    }

    /// Offset added at time `t`.
    pub fn magnitude(&self, t: &DateTime<Utc>) -> f64 {
        if *t < self.onset || *t >= self.repaired() {
            return 0.0;
        }
        let elapsed = (*t - self.onset).num_milliseconds() as f64 / 86_400_000.0;
        if self.ramp_days <= 0.0 {
            self.severity
        } else {
            self.severity * (elapsed / self.ramp_days).min(1.0)
        }
    }
}

/// Adds the fault ramp to its channels and marks faulty rows in `health`.
/// A zero-severity fault changes nothing.
pub fn inject_fault(
    data: &mut TimeSeriesDataset,
    health: &mut [u8],
    spec: &FaultSpec,
) -> Result<()> {
    spec.validate()?;
    if health.len() != data.len() {
        return Err(Error::config("health labels and dataset differ in length"));
    }
    let cols = spec
        .channels
        .iter()
        .map(|c| {
            data.schema
                .column_index(c)
                .ok_or_else(|| Error::config(format!("fault channel `{c}` is not a model channel")))
        })
        .collect::<Result<Vec<_>>>()?;
    if spec.severity == 0.0 {
        return Ok(());
    }
    for (i, t) in data.timestamps.iter().enumerate() {
        let m = spec.magnitude(t);
        if *t >= spec.onset && *t < spec.repaired() {
            health[i] = 1;
        }
        if m != 0.0 {
            for &c in &cols {
                data.values[[i, c]] += m;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::unit::pump_schema;
    use chrono::TimeZone;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()
    }

    fn noisy(n: usize, sigma: f64) -> TimeSeriesDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nd = Normal::new(0.0, sigma).unwrap();
        let values = Array2::from_shape_simple_fn((n, 14), || 0.5 + nd.sample(&mut rng));
        let ts = (0..n)
            .map(|i| t0() + Duration::minutes(30 * i as i64))
            .collect();
        TimeSeriesDataset::new(pump_schema(), ts, values).unwrap()
    }

    fn spec(channels: &[&str], severity: f64) -> FaultSpec {
        FaultSpec {
            kind: "primary-seal-drift".into(),
            onset: t0() + Duration::days(10),
            ramp_days: 5.0,
            channels: channels.iter().map(|s| s.to_string()).collect(),
            severity,
            detection_lag_days: 10.0,
            maintenance_days: 100.0,
        }
    }

    #[test]
    fn zero_severity_is_inert() {
        let mut d = noisy(2000, 0.01);
        let before = d.values.clone();
        let mut h = vec![0; d.len()];
        inject_fault(&mut d, &mut h, &spec(&["de_seal_pressure"], 0.0)).unwrap();
        assert_eq!(d.values, before);
        assert!(h.iter().all(|&y| y == 0));
    }

    #[test]
    fn post_ramp_mean_shift() {
        let sigma = 0.01;
        let mut d = noisy(2000, sigma);
        let mut h = vec![0; d.len()];
        let f = spec(&["de_seal_pressure"], 0.3);
        inject_fault(&mut d, &mut h, &f).unwrap();
        let c = d.schema.column_index("de_seal_pressure").unwrap();
        let ramp_end = f.onset + Duration::days(5);
        let mean = |pick: &dyn Fn(&DateTime<Utc>) -> bool| {
            let v: Vec<f64> = d
                .timestamps
                .iter()
                .zip(d.values.column(c))
                .filter(|(t, _)| pick(t))
                .map(|(_, v)| *v)
                .collect();
            (v.iter().sum::<f64>() / v.len() as f64, v.len())
        };
        let (pre, n_pre) = mean(&|t| *t < f.onset);
        let (post, n_post) = mean(&|t| *t >= ramp_end);
        let tol = 3.0 * sigma * (1.0 / n_pre as f64 + 1.0 / n_post as f64).sqrt();
        assert!((post - (pre + 0.3)).abs() < tol, "{post} {pre} {tol}");
        assert_eq!(h.iter().filter(|&&y| y == 1).count(), 2000 - 480);
    }

    #[test]
    fn causality_and_superposition() {
        let base = noisy(1500, 0.01);
        let a = spec(&["de_seal_pressure"], 0.2);
        let mut b = spec(&["nde_seal_temperature"], 0.4);
        b.onset = t0() + Duration::days(20);
        let mut both = base.clone();
        let mut h = vec![0; base.len()];
        inject_fault(&mut both, &mut h, &a).unwrap();
        inject_fault(&mut both, &mut h, &b).unwrap();
        let mut only_a = base.clone();
        inject_fault(&mut only_a, &mut vec![0; base.len()], &a).unwrap();
        let mut only_b = base.clone();
        inject_fault(&mut only_b, &mut vec![0; base.len()], &b).unwrap();
        let sum = &only_a.values + &only_b.values - &base.values;
        for (x, y) in both.values.iter().zip(sum.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (i, t) in base.timestamps.iter().enumerate() {
            if *t < a.onset {
                assert_eq!(both.values.row(i), base.values.row(i));
            }
        }
    }

    #[test]
    fn unknown_channel() {
        let mut d = noisy(10, 0.01);
        let mut h = vec![0; 10];
        let e = inject_fault(&mut d, &mut h, &spec(&["de_seal_level"], 0.1));
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn reported_after_onset() {
        let f = spec(&["flow"], 0.1);
        assert_eq!(f.reported() - f.onset, Duration::days(10));
        assert!((f.magnitude(&(f.onset + Duration::days(1))) - 0.1 / 5.0).abs() < 1e-15);
        assert_eq!(f.magnitude(&f.repaired()), 0.0);
    }
}
