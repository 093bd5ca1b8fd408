//! False-alarm rates on healthy periods and early-detection statistics around
//! reported faults, tabulated across detector variants.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::Serialize;

use crate::adaptation::Variant;
use crate::error::{Error, Result};
use crate::scoring::{DayRecord, ScoreSeries};
use crate::simulator::{FleetManifest, Relation};

/// Days before the reported date that are inspected for early alarms.
pub const LOOKBACK_DAYS: i64 = 14;

/// Name of the test range holding known-healthy target data.
pub const NORMAL_RANGE: &str = "normal";

/// Fraction of samples labelled abnormal.
pub fn false_alarm_rate(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::data("false alarm rate over an empty period"));
    }
    let flagged = labels.iter().filter(|&&y| y == 1).count();
    Ok(flagged as f64 / labels.len() as f64)
}

/// Dates `[reported - 14d, reported)`, after checking the day table covers them.
fn window(days: &[DayRecord], reported: &DateTime<Utc>) -> Result<(NaiveDate, NaiveDate)> {
    let end = reported.date_naive();
    let start = end - Duration::days(LOOKBACK_DAYS);
    let covered = match (days.first(), days.last()) {
        (Some(a), Some(b)) => a.date <= start && b.date >= end - Duration::days(1),
        _ => false,
    };
    if !covered {
        return Err(Error::data(format!(
            "day table does not cover {start} .. {end} before the reported fault"
        )));
    }
    Ok((start, end))
}

/// Whole days between the first flagged day of the look-back window and the
/// reported date; 0 when nothing in the window is flagged.
pub fn detection_days_in_advance(days: &[DayRecord], reported: &DateTime<Utc>) -> Result<u32> {
    let (start, end) = window(days, reported)?;
    Ok(days
        .iter()
        .find(|d| d.flagged && d.date >= start && d.date < end)
        .map_or(0, |d| (end - d.date).num_days() as u32))
}

/// Flagged days inside the look-back window.
pub fn abnormal_days_in_window(days: &[DayRecord], reported: &DateTime<Utc>) -> Result<u32> {
    let (start, end) = window(days, reported)?;
    Ok(days
        .iter()
        .filter(|d| d.flagged && d.date >= start && d.date < end)
        .count() as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitRow {
    pub unit: String,
    pub relation: Relation,
    pub normal_samples: usize,
    pub false_alarm_rate: BTreeMap<Variant, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultRow {
    pub unit: String,
    pub relation: Relation,
    pub kind: String,
    pub reported: DateTime<Utc>,
    pub days_in_advance: BTreeMap<Variant, u32>,
    pub abnormal_days: BTreeMap<Variant, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub variants: Vec<Variant>,
    pub units: Vec<UnitRow>,
    pub faults: Vec<FaultRow>,
}

/// Score series of one variant, keyed by unit id.
pub type UnitSeries = BTreeMap<String, ScoreSeries>;

/// Tabulates every target unit of `manifest` for which all variants have a
/// score series. Every variant must have been scored on the same samples.
pub fn build_report(
    series: &BTreeMap<Variant, UnitSeries>,
    manifest: &FleetManifest,
) -> Result<EvaluationReport> {
    let variants: Vec<Variant> = series.keys().copied().collect();
    let Some(first) = series.values().next() else {
        return Err(Error::config("no variant outputs to evaluate"));
    };
    for (v, units) in series {
        if units.keys().ne(first.keys()) {
            return Err(Error::config(format!(
                "variant {v} was scored on a different set of units"
            )));
        }
        for (u, s) in units {
            if s.timestamps != first[u].timestamps {
                return Err(Error::config(format!(
                    "variant {v} scored unit `{u}` on different samples"
                )));
            }
        }
    }
    let mut units = Vec::new();
    let mut faults = Vec::new();
    for mu in manifest.targets().filter(|u| first.contains_key(&u.id)) {
        let plan = &mu.split;
        if let Some(range) = plan.test_range(NORMAL_RANGE) {
            let keep: Vec<usize> = first[&mu.id]
                .timestamps
                .iter()
                .enumerate()
                .filter(|(_, t)| range.contains(t) && !plan.is_excluded(t))
                .map(|(i, _)| i)
                .collect();
            let mut far = BTreeMap::new();
            for (v, s) in series {
                let labels: Vec<u8> = keep.iter().map(|&i| s[&mu.id].labels[i]).collect();
                far.insert(
                    *v,
                    false_alarm_rate(&labels).map_err(|_| {
                        Error::data(format!(
                            "unit `{}` has no samples in its normal range",
                            mu.id
                        ))
                    })?,
                );
            }
            units.push(UnitRow {
                unit: mu.id.clone(),
                relation: mu.relation,
                normal_samples: keep.len(),
                false_alarm_rate: far,
            });
        }
        for f in &mu.faults {
            let reported = f.reported();
            let mut adv = BTreeMap::new();
            let mut abn = BTreeMap::new();
            for (v, s) in series {
                let days = &s[&mu.id].days;
                adv.insert(*v, detection_days_in_advance(days, &reported)?);
                abn.insert(*v, abnormal_days_in_window(days, &reported)?);
            }
            faults.push(FaultRow {
                unit: mu.id.clone(),
                relation: mu.relation,
                kind: f.kind.clone(),
                reported,
                days_in_advance: adv,
                abnormal_days: abn,
            });
        }
    }
    Ok(EvaluationReport {
        variants,
        units,
        faults,
    })
}

impl EvaluationReport {
    /// Long format: `unit,relation,event,metric,variant,value`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let e = |e: csv::Error| Error::data(format!("csv write failed: {e}"));
        w.write_record(["unit", "relation", "event", "metric", "variant", "value"])
            .map_err(e)?;
        for u in &self.units {
            let rel = u.relation.to_string();
            w.write_record([
                &u.unit,
                &rel,
                NORMAL_RANGE,
                "samples",
                "",
                &u.normal_samples.to_string(),
            ])
            .map_err(e)?;
            for (v, r) in &u.false_alarm_rate {
                w.write_record([
                    &u.unit,
                    &rel,
                    NORMAL_RANGE,
                    "false_alarm_rate",
                    v.tag(),
                    &format!("{r}"),
                ])
                .map_err(e)?;
            }
        }
        for f in &self.faults {
            let rel = f.relation.to_string();
            let event = format!("{}@{}", f.kind, f.reported.date_naive());
            for (v, d) in &f.days_in_advance {
                w.write_record([
                    &f.unit,
                    &rel,
                    &event,
                    "days_in_advance",
                    v.tag(),
                    &d.to_string(),
                ])
                .map_err(e)?;
            }
            for (v, d) in &f.abnormal_days {
                w.write_record([
                    &f.unit,
                    &rel,
                    &event,
                    "abnormal_days",
                    v.tag(),
                    &d.to_string(),
                ])
                .map_err(e)?;
            }
        }
        w.flush().map_err(|e| Error::data(e.to_string()))
    }

    /// Aligned plain-text table, one column per variant.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut head = vec![
            "unit".to_string(),
            "relation".into(),
            "event".into(),
            "metric".into(),
        ];
        head.extend(self.variants.iter().map(|v| v.to_string()));
        rows.push(head);
        for u in &self.units {
            let mut r = vec![
                u.unit.clone(),
                u.relation.to_string(),
                format!("normal (n={})", u.normal_samples),
                "false alarm rate".into(),
            ];
            r.extend(
                self.variants
                    .iter()
                    .map(|v| format!("{:.3}", u.false_alarm_rate[v])),
            );
            rows.push(r);
        }
        for f in &self.faults {
            let event = format!("{} {}", f.kind, f.reported.date_naive());
            let mut a = vec![
                f.unit.clone(),
                f.relation.to_string(),
                event.clone(),
                "days in advance".into(),
            ];
            a.extend(
                self.variants
                    .iter()
                    .map(|v| f.days_in_advance[v].to_string()),
            );
            rows.push(a);
            let mut b = vec![
                f.unit.clone(),
                f.relation.to_string(),
                event,
                "abnormal days".into(),
            ];
            b.extend(self.variants.iter().map(|v| f.abnormal_days[v].to_string()));
            rows.push(b);
        }
        let ncol = rows[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c < 4 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(
                    out,
                    "{}",
                    "-".repeat(widths.iter().sum::<usize>() + 2 * (ncol - 1))
                );
            }
        }
        out
    }

    pub fn save(&self, csv_path: &Path, text_path: &Path) -> Result<()> {
        let f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        std::fs::write(text_path, self.render_text()).map_err(|e| Error::io(text_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::daily_aggregate;
    use crate::simulator::default_fleet;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn day(d: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap() + Duration::days(d)
    }

    fn days_flagged(n: i64, flagged: &[i64]) -> Vec<DayRecord> {
        (0..n)
            .map(|d| DayRecord {
                date: day(d).date_naive(),
                count: usize::from(flagged.contains(&d)),
                flagged: flagged.contains(&d),
            })
            .collect()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(false_alarm_rate(&[0; 100]).unwrap(), 0.0);
        let mut l = vec![0u8; 100];
        l[..5].fill(1);
        assert_eq!(false_alarm_rate(&l).unwrap(), 0.05);
        assert_eq!(false_alarm_rate(&[1; 7]).unwrap(), 1.0);
        assert!(matches!(false_alarm_rate(&[]), Err(Error::Data(_))));
    }

    #[test]
    fn advance_examples() {
        let reported = day(30) + Duration::hours(9);
        assert_eq!(
            detection_days_in_advance(&days_flagged(40, &[21, 22]), &reported).unwrap(),
            9
        );
        assert_eq!(
            detection_days_in_advance(&days_flagged(40, &[]), &reported).unwrap(),
            0
        );
        assert_eq!(
            detection_days_in_advance(&days_flagged(40, &[16]), &reported).unwrap(),
            14
        );
        // before the window and on the reported day itself do not count
        assert_eq!(
            detection_days_in_advance(&days_flagged(40, &[15, 30]), &reported).unwrap(),
            0
        );
        let all: Vec<i64> = (16..30).collect();
        assert_eq!(
            abnormal_days_in_window(&days_flagged(40, &all), &reported).unwrap(),
            14
        );
        assert_eq!(
            abnormal_days_in_window(&days_flagged(40, &[]), &reported).unwrap(),
            0
        );
        assert!(matches!(
            detection_days_in_advance(&days_flagged(20, &[]), &reported),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn advance_iff_abnormal(flags in proptest::collection::vec(any::<bool>(), 40)) {
            let idx: Vec<i64> = flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i as i64).collect();
            let d = days_flagged(40, &idx);
            let r = day(35);
            let a = detection_days_in_advance(&d, &r).unwrap();
            let b = abnormal_days_in_window(&d, &r).unwrap();
            prop_assert_eq!(a > 0, b > 0);
            prop_assert!(a <= 14 && b <= 14 && b <= a);
        }

        #[test]
        fn rate_ignores_order(mut labels in proptest::collection::vec(0u8..2, 1..200), seed in any::<u64>()) {
            let a = false_alarm_rate(&labels).unwrap();
            let k = (seed as usize) % labels.len();
            labels.rotate_left(k);
            labels.reverse();
            prop_assert_eq!(a, false_alarm_rate(&labels).unwrap());
        }
    }

    /// A score series for one target unit: flagged on the given day offsets.
    fn series(flagged_days: &[i64]) -> ScoreSeries {
        let ts: Vec<DateTime<Utc>> = (120 * 48..480 * 48)
            .map(|i| day(0) + Duration::minutes(30 * i))
            .collect();
        let labels: Vec<u8> = ts
            .iter()
            .map(|t| u8::from(flagged_days.contains(&(*t - day(0)).num_days())))
            .collect();
        let days = daily_aggregate(&ts, &labels, 0).unwrap();
        ScoreSeries {
            residuals: ndarray::Array2::zeros((ts.len(), 0)),
            scores: vec![0.0; ts.len()],
            smoothed: vec![0.0; ts.len()],
            timestamps: ts,
            labels,
            days,
        }
    }

    #[test]
    fn single_variant_single_unit() {
        let m = default_fleet(0).manifest().unwrap();
        let mut per = BTreeMap::new();
        per.insert(
            Variant::Baseline,
            BTreeMap::from([("B-B".to_string(), series(&[130, 295]))]),
        );
        let r = build_report(&per, &m).unwrap();
        assert_eq!(r.units.len(), 1);
        assert_eq!(r.units[0].normal_samples, 110 * 48);
        assert!((r.units[0].false_alarm_rate[&Variant::Baseline] - 1.0 / 110.0).abs() < 1e-12);
        assert_eq!(r.faults.len(), 2);
        assert_eq!(r.faults[0].days_in_advance[&Variant::Baseline], 5);
        assert_eq!(r.faults[1].days_in_advance[&Variant::Baseline], 0);
    }

    #[test]
    fn variant_order_and_mismatch() {
        let m = default_fleet(0).manifest().unwrap();
        let mut per = BTreeMap::new();
        for v in [
            Variant::Taad,
            Variant::Mmd,
            Variant::Baseline,
            Variant::AdaBn,
        ] {
            per.insert(v, BTreeMap::from([("A-A".to_string(), series(&[]))]));
        }
        let r = build_report(&per, &m).unwrap();
        assert_eq!(r.variants, Variant::ALL);
        let text = r.render_text();
        let head = text.lines().next().unwrap();
        let pos: Vec<usize> = ["Baseline", "AdaBN", "MMD", "TAAD"]
            .iter()
            .map(|n| head.find(n).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        let mut a = Vec::new();
        let mut b = Vec::new();
        r.write_csv(&mut a).unwrap();
        build_report(&per, &m).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);

        let mut short = series(&[]);
        short.timestamps.pop();
        per.insert(Variant::Taad, BTreeMap::from([("A-A".to_string(), short)]));
        assert!(matches!(build_report(&per, &m), Err(Error::Config(_))));
    }
}
