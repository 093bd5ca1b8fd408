use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if end <= start {
            return Err(Error::config(format!(
                "empty or reversed range {start} .. {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        *t >= self.start && *t < self.end
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRange {
    pub name: String,
    #[serde(flatten)]
    pub range: TimeRange,
}

/// Date ranges for one unit plus the reported fault dates whose neighbourhoods
/// are treated as uncertain health and removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: TimeRange,
    pub validation: TimeRange,
    #[serde(default)]
    pub tests: Vec<NamedRange>,
    #[serde(default)]
    pub reported_faults: Vec<DateTime<Utc>>,
    #[serde(default = "default_exclusion_days")]
    pub exclusion_days: i64,
}

pub fn default_exclusion_days() -> i64 {
    60
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TimeSeriesDataset,
    pub validation: TimeSeriesDataset,
    pub tests: Vec<(String, TimeSeriesDataset)>,
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let mut ranges = vec![("train", &self.train), ("validation", &self.validation)];
        for t in &self.tests {
            if t.range.end <= t.range.start {
                return Err(Error::config(format!("test range `{}` is empty", t.name)));
            }
            ranges.push((t.name.as_str(), &t.range));
        }
        if self.train.end <= self.train.start || self.validation.end <= self.validation.start {
            return Err(Error::config(
                "train and validation ranges must be non-empty",
            ));
        }
        for (i, (na, a)) in ranges.iter().enumerate() {
            for (nb, b) in &ranges[i + 1..] {
                if a.overlaps(b) {
                    return Err(Error::config(format!("ranges `{na}` and `{nb}` overlap")));
                }
            }
        }
        if self.exclusion_days < 0 {
            return Err(Error::config("exclusion_days must be non-negative"));
        }
        Ok(())
    }

    /// True when `t` lies within `exclusion_days` (inclusive) of a reported fault.
    pub fn is_excluded(&self, t: &DateTime<Utc>) -> bool {
        let w = Duration::days(self.exclusion_days);
        self.reported_faults
            .iter()
            .any(|f| *t >= *f - w && *t <= *f + w)
    }

    /// Rows inside `range` and outside every fault neighbourhood.
    pub fn select(&self, data: &TimeSeriesDataset, range: &TimeRange) -> TimeSeriesDataset {
        data.filter_rows(|_, t| range.contains(t) && !self.is_excluded(t))
    }

    pub fn test_range(&self, name: &str) -> Option<&TimeRange> {
        self.tests.iter().find(|t| t.name == name).map(|t| &t.range)
    }
}

pub fn make_splits(data: &TimeSeriesDataset, plan: &SplitPlan) -> Result<Splits> {
    plan.validate()?;
    let train = plan.select(data, &plan.train);
    if train.is_empty() {
        return Err(Error::data("training segment is empty after exclusions"));
    }
    let validation = plan.select(data, &plan.validation);
    let tests = plan
        .tests
        .iter()
        .map(|t| (t.name.clone(), plan.select(data, &t.range)))
        .collect();
    Ok(Splits {
        train,
        validation,
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{Channel, Role, VariableSchema};
    use chrono::TimeZone;
    use ndarray::Array2;

    fn day(d: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap() + Duration::days(d)
    }

    fn daily(n: i64) -> TimeSeriesDataset {
        let schema = VariableSchema::new(vec![
            Channel {
                name: "x".into(),
                role: Role::Measurement,
                unit: None,
            },
            Channel {
                name: "w".into(),
                role: Role::Control,
                unit: None,
            },
        ])
        .unwrap();
        let ts: Vec<_> = (0..n).map(day).collect();
        TimeSeriesDataset::new(schema, ts, Array2::zeros((n as usize, 2))).unwrap()
    }

    fn plan(faults: Vec<DateTime<Utc>>) -> SplitPlan {
        SplitPlan {
            train: TimeRange::new(day(0), day(200)).unwrap(),
            validation: TimeRange::new(day(200), day(250)).unwrap(),
            tests: vec![NamedRange {
                name: "normal".into(),
                range: TimeRange::new(day(250), day(400)).unwrap(),
            }],
            reported_faults: faults,
            exclusion_days: 60,
        }
    }

    #[test]
    fn no_faults_is_pure_range_selection() {
        let s = make_splits(&daily(400), &plan(vec![])).unwrap();
        assert_eq!(s.train.len(), 200);
        assert_eq!(s.validation.len(), 50);
        assert_eq!(s.tests[0].1.len(), 150);
    }

    #[test]
    fn fault_neighbourhood_removed() {
        let s = make_splits(&daily(400), &plan(vec![day(100)])).unwrap();
        for t in s.train.timestamps.iter().chain(&s.tests[0].1.timestamps) {
            assert!(*t < day(40) || *t > day(160));
        }
        assert_eq!(s.train.len(), 40 + (200 - 161));
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let mut p = plan(vec![]);
        p.validation = TimeRange::new(day(150), day(250)).unwrap();
        assert!(matches!(
            make_splits(&daily(400), &p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_train_is_data_error() {
        let mut p = plan(vec![]);
        p.train = TimeRange::new(day(500), day(600)).unwrap();
        p.validation = TimeRange::new(day(600), day(700)).unwrap();
        p.tests.clear();
        assert!(matches!(make_splits(&daily(400), &p), Err(Error::Data(_))));
    }

    #[test]
    fn segments_disjoint() {
        let s = make_splits(&daily(400), &plan(vec![day(300)])).unwrap();
        let mut all: Vec<_> = s.train.timestamps.clone();
        all.extend(&s.validation.timestamps);
        all.extend(&s.tests[0].1.timestamps);
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}
