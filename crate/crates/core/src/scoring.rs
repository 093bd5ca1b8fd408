//! From reconstructions to anomaly decisions.
//!
//! Per sample: relative residual `|x_hat - x| / xbar`, score `mean(r) + max(r)`,
//! forward min-window smoothing, and a threshold `alpha * rbar` where `rbar` is
//! the mean score on healthy target training data. Labels are then counted per
//! calendar day.

use std::collections::VecDeque;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{format_timestamp, parse_timestamp};
use crate::error::{Error, Result};

/// Divisor used for channels whose training mean is (nearly) zero.
pub const MIN_CHANNEL_MEAN: f64 = 1e-6;

/// Default smoothing window in samples.
pub const DEFAULT_WINDOW: usize = 12;

/// Threshold multiplier within one installation station.
pub const ALPHA_INTRA_STATION: f64 = 1.5;
/// Threshold multiplier across stations, where the domain gap is larger.
pub const ALPHA_CROSS_STATION: f64 = 2.0;

/// Per-channel mean of the target training data, used to scale residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualScaler {
    xbar: Array1<f64>,
}

impl ResidualScaler {
    pub fn new(xbar: Array1<f64>) -> Result<Self> {
        if xbar.is_empty() || xbar.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::config(
                "residual scaler entries must be positive and finite",
            ));
        }
        Ok(Self { xbar })
    }

    /// Column means of `data`; means below [`MIN_CHANNEL_MEAN`] in magnitude are replaced by it.
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::data("cannot fit residual scaler on zero rows"));
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        Self::new(mean.mapv(|m| m.abs().max(MIN_CHANNEL_MEAN)))
    }

    pub fn xbar(&self) -> &Array1<f64> {
        &self.xbar
    }

    pub fn relative_residual(
        &self,
        x_hat: ArrayView1<f64>,
        x: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        if x_hat.len() != x.len() || x.len() != self.xbar.len() {
            return Err(Error::config("residual width mismatch"));
        }
        Ok((&x_hat - &x).mapv(f64::abs) / &self.xbar)
    }

    pub fn relative_residuals(
        &self,
        x_hat: ArrayView2<f64>,
        x: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if x_hat.shape() != x.shape() || x.ncols() != self.xbar.len() {
            return Err(Error::config("residual width mismatch"));
        }
        Ok((&x_hat - &x).mapv(f64::abs) / &self.xbar)
    }
}

/// `mean(r) + max(r)` over channels.
pub fn anomaly_score(r: ArrayView1<f64>) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::config("anomaly score of an empty residual"));
    }
    let mean = r.sum() / r.len() as f64;
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(mean + max)
}

pub fn anomaly_scores(residuals: ArrayView2<f64>) -> Result<Vec<f64>> {
    residuals.rows().into_iter().map(anomaly_score).collect()
}

/// `out[i] = min(s[i], ..., s[i + window - 1])`, the window truncated at the end.
pub fn smooth_scores(scores: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::config("smoothing window must be at least 1"));
    }
    let n = scores.len();
    let mut out = vec![0.0; n];
    // indices with increasing values; front is the window minimum
    let mut deque: VecDeque<usize> = VecDeque::new();
    for i in (0..n).rev() {
        while let Some(&back) = deque.back() {
            if scores[back] >= scores[i] {
                deque.pop_back();
            } else {
                break;
            }
        }
        deque.push_back(i);
        while let Some(&front) = deque.front() {
            if front >= i + window {
                deque.pop_front();
            } else {
                break;
            }
        }
        // after the push the front is the smallest value in [i, i + window)
        out[i] = scores[*deque.front().expect("just pushed")];
    }
    Ok(out)
}

/// Detection threshold `alpha * rbar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBase {
    /// Mean anomaly score on healthy target training + validation data; `None` until fitted.
    pub rbar: Option<f64>,
    pub alpha: f64,
    pub window: usize,
}

impl ThresholdBase {
    pub fn unfitted(alpha: f64, window: usize) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::config("alpha must be positive"));
        }
        if window == 0 {
            return Err(Error::config("smoothing window must be at least 1"));
        }
        Ok(Self {
            rbar: None,
            alpha,
            window,
        })
    }

    /// Fits `rbar` as the mean of healthy-data scores.
    pub fn fit(healthy_scores: &[f64], alpha: f64, window: usize) -> Result<Self> {
        let mut base = Self::unfitted(alpha, window)?;
        if healthy_scores.is_empty() {
            return Err(Error::data("cannot fit threshold on zero samples"));
        }
        let rbar = healthy_scores.iter().sum::<f64>() / healthy_scores.len() as f64;
        if !rbar.is_finite() || rbar < 0.0 {
            return Err(Error::data(
                "healthy scores produced a non-finite threshold base",
            ));
        }
        base.rbar = Some(rbar);
        Ok(base)
    }

    pub fn threshold(&self) -> Result<f64> {
        self.rbar
            .map(|r| self.alpha * r)
            .ok_or_else(|| Error::state("threshold base has not been fitted"))
    }
}

/// `y_i = 1` iff `smoothed_i > alpha * rbar`.
pub fn label(smoothed: &[f64], base: &ThresholdBase) -> Result<Vec<u8>> {
    let thr = base.threshold()?;
    Ok(smoothed.iter().map(|s| u8::from(*s > thr)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub count: usize,
    pub flagged: bool,
}

/// Abnormal-sample count per calendar day (UTC). A day is flagged when its
/// count exceeds `day_threshold`.
pub fn daily_aggregate(
    timestamps: &[DateTime<Utc>],
    labels: &[u8],
    day_threshold: usize,
) -> Result<Vec<DayRecord>> {
    if timestamps.len() != labels.len() {
        return Err(Error::data("timestamps and labels differ in length"));
    }
    if timestamps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::data("timestamps are not sorted"));
    }
    let mut days: Vec<DayRecord> = Vec::new();
    for (t, y) in timestamps.iter().zip(labels) {
        let date = t.date_naive();
        match days.last_mut() {
            Some(d) if d.date == date => d.count += usize::from(*y),
            _ => days.push(DayRecord {
                date,
                count: usize::from(*y),
                flagged: false,
            }),
        }
    }
    for d in &mut days {
        d.flagged = d.count > day_threshold;
    }
    Ok(days)
}

/// Scores, smoothed scores, labels and day aggregates for one unit and detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    /// Relative residual per sample and channel. Empty (zero columns) when
    /// the series was read back from CSV.
    pub residuals: Array2<f64>,
    pub scores: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub labels: Vec<u8>,
    pub days: Vec<DayRecord>,
}

impl ScoreSeries {
    pub fn compute(
        timestamps: Vec<DateTime<Utc>>,
        x_hat: ArrayView2<f64>,
        x: ArrayView2<f64>,
        scaler: &ResidualScaler,
        base: &ThresholdBase,
        day_threshold: usize,
    ) -> Result<Self> {
        if timestamps.len() != x.nrows() {
            return Err(Error::data("timestamps and rows differ in length"));
        }
        let residuals = scaler.relative_residuals(x_hat, x)?;
        let scores = anomaly_scores(residuals.view())?;
        let smoothed = smooth_scores(&scores, base.window)?;
        let labels = label(&smoothed, base)?;
        let days = daily_aggregate(&timestamps, &labels, day_threshold)?;
        Ok(Self {
            timestamps,
            residuals,
            scores,
            smoothed,
            labels,
            days,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// `timestamp,score,smoothed,label` per sample.
    pub fn write_samples_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let e = |e: csv::Error| Error::data(format!("csv write failed: {e}"));
        w.write_record(["timestamp", "score", "smoothed", "label"])
            .map_err(e)?;
        for i in 0..self.len() {
            w.write_record([
                format_timestamp(&self.timestamps[i]),
                format!("{}", self.scores[i]),
                format!("{}", self.smoothed[i]),
                self.labels[i].to_string(),
            ])
            .map_err(e)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))
    }

    /// `date,count,flag` per calendar day.
    pub fn write_days_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_days_csv(&self.days, writer)
    }

    pub fn save(&self, samples: &Path, days: &Path) -> Result<()> {
        let f = std::fs::File::create(samples).map_err(|e| Error::io(samples, e))?;
        self.write_samples_csv(std::io::BufWriter::new(f))?;
        let f = std::fs::File::create(days).map_err(|e| Error::io(days, e))?;
        self.write_days_csv(std::io::BufWriter::new(f))
    }

    /// Reads a sample CSV and rebuilds the day table with `day_threshold`.
    pub fn read_samples_csv<R: std::io::Read>(reader: R, day_threshold: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut timestamps = Vec::new();
        let mut scores = Vec::new();
        let mut smoothed = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::data(format!("line {line}: {e}")))?;
            let bad = || Error::data(format!("line {line}: malformed score row"));
            if rec.len() != 4 {
                return Err(bad());
            }
            timestamps.push(parse_timestamp(&rec[0]).ok_or_else(bad)?);
            scores.push(rec[1].parse().map_err(|_| bad())?);
            smoothed.push(rec[2].parse().map_err(|_| bad())?);
            let y: u8 = rec[3].parse().map_err(|_| bad())?;
            if y > 1 {
                return Err(bad());
            }
            labels.push(y);
        }
        let days = daily_aggregate(&timestamps, &labels, day_threshold)?;
        Ok(Self {
            residuals: Array2::zeros((timestamps.len(), 0)),
            timestamps,
            scores,
            smoothed,
            labels,
            days,
        })
    }

    pub fn load(samples: &Path, day_threshold: usize) -> Result<Self> {
        let f = std::fs::File::open(samples).map_err(|e| Error::io(samples, e))?;
        Self::read_samples_csv(std::io::BufReader::new(f), day_threshold)
    }
}

pub fn write_days_csv<W: std::io::Write>(days: &[DayRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let e = |e: csv::Error| Error::data(format!("csv write failed: {e}"));
    w.write_record(["date", "count", "flag"]).map_err(e)?;
    for d in days {
        w.write_record([
            d.date.format("%Y-%m-%d").to_string(),
            d.count.to_string(),
            u8::from(d.flagged).to_string(),
        ])
        .map_err(e)?;
    }
    w.flush().map_err(|e| Error::data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn residual_examples() {
        let s = ResidualScaler::new(array![2.0, 0.5]).unwrap();
        let r = s
            .relative_residual(array![1.2, 0.8].view(), array![1.0, 1.0].view())
            .unwrap();
        assert!((r[0] - 0.1).abs() < 1e-12 && (r[1] - 0.4).abs() < 1e-12);
        let zero = s
            .relative_residual(array![1.0, 1.0].view(), array![1.0, 1.0].view())
            .unwrap();
        assert_eq!(zero, array![0.0, 0.0]);
        let doubled = s
            .relative_residual(array![1.4, 0.6].view(), array![1.0, 1.0].view())
            .unwrap();
        assert!((&doubled - &(&r * 2.0)).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn scaler_guards_zero_means() {
        let s = ResidualScaler::fit(array![[0.0, 2.0], [0.0, 4.0]].view()).unwrap();
        assert_eq!(s.xbar(), &array![MIN_CHANNEL_MEAN, 3.0]);
        assert!(ResidualScaler::new(array![1.0, 0.0]).is_err());
    }

    #[test]
    fn score_examples() {
        assert_eq!(anomaly_score(array![0.0, 0.0].view()).unwrap(), 0.0);
        assert_eq!(anomaly_score(array![0.1, 0.4].view()).unwrap(), 0.65);
        assert!((anomaly_score(array![0.3, 0.3, 0.3].view()).unwrap() - 0.6).abs() < 1e-15);
        assert!(anomaly_score(Array1::<f64>::zeros(0).view()).is_err());
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(
            smooth_scores(&[5.0, 1.0, 2.0, 9.0], 3).unwrap(),
            vec![1.0, 1.0, 2.0, 9.0]
        );
        let s = [3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(smooth_scores(&s, 1).unwrap(), s.to_vec());
        let spike = [1.0, 1.0, 50.0, 1.0, 1.0];
        assert!(smooth_scores(&spike, 2).unwrap().iter().all(|v| *v == 1.0));
        assert!(smooth_scores(&s, 0).is_err());
    }

    #[test]
    fn label_examples() {
        let base = ThresholdBase {
            rbar: Some(0.4),
            alpha: ALPHA_INTRA_STATION,
            window: 1,
        };
        assert_eq!(label(&[0.65], &base).unwrap(), vec![1]);
        assert_eq!(label(&[0.1, 0.59], &base).unwrap(), vec![0, 0]);
        assert_eq!(ALPHA_CROSS_STATION, 2.0);
        let unfitted = ThresholdBase::unfitted(1.5, 12).unwrap();
        assert!(matches!(label(&[1.0], &unfitted), Err(Error::State(_))));
    }

    #[test]
    fn threshold_fit() {
        let b = ThresholdBase::fit(&[0.0, 0.0], 1.5, 12).unwrap();
        assert_eq!(b.threshold().unwrap(), 0.0);
        let b = ThresholdBase::fit(&[0.2, 0.4], 1.5, 12).unwrap();
        assert!((b.rbar.unwrap() - 0.3).abs() < 1e-15);
        assert!(ThresholdBase::fit(&[], 1.5, 12).is_err());
    }

    fn ts(hours: &[i64]) -> Vec<DateTime<Utc>> {
        let t0 = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
        hours.iter().map(|h| t0 + Duration::hours(*h)).collect()
    }

    #[test]
    fn daily_examples() {
        let t = ts(&[0, 1, 2, 25, 26]);
        let days = daily_aggregate(&t, &[0, 0, 0, 0, 0], 0).unwrap();
        assert!(days.iter().all(|d| d.count == 0 && !d.flagged));
        let days = daily_aggregate(&t, &[1, 1, 1, 0, 0], 0).unwrap();
        assert_eq!((days[0].count, days[0].flagged), (3, true));
        assert!(!days[1].flagged);
        let days = daily_aggregate(&t, &[1, 1, 1, 0, 0], 5).unwrap();
        assert!(!days[0].flagged);
        assert!(daily_aggregate(&ts(&[3, 1]), &[0, 0], 0).is_err());
    }

    #[test]
    fn samples_csv_round_trip() {
        let t = ts(&[0, 1, 30]);
        let x = array![[1.0, 2.0], [1.5, 2.0], [1.0, 9.0]];
        let x_hat = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let scaler = ResidualScaler::new(array![1.0, 2.0]).unwrap();
        let base = ThresholdBase::fit(&[0.1, 0.2], 1.5, 1).unwrap();
        let s = ScoreSeries::compute(t, x_hat.view(), x.view(), &scaler, &base, 0).unwrap();
        let mut buf = Vec::new();
        s.write_samples_csv(&mut buf).unwrap();
        let back = ScoreSeries::read_samples_csv(buf.as_slice(), 0).unwrap();
        assert_eq!(back.scores, s.scores);
        assert_eq!(back.smoothed, s.smoothed);
        assert_eq!(back.labels, s.labels);
        assert_eq!(back.days, s.days);
    }

    proptest! {
        #[test]
        fn smoothing_bounds(s in proptest::collection::vec(0.0f64..100.0, 1..60), l in 1usize..15) {
            let out = smooth_scores(&s, l).unwrap();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(out.len(), s.len());
            for i in 0..s.len() {
                prop_assert!(lo <= out[i] && out[i] <= s[i]);
                let end = (i + l).min(s.len());
                let brute = s[i..end].iter().copied().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(out[i], brute);
            }
        }

        #[test]
        fn score_monotone_in_each_residual(
            r in proptest::collection::vec(0.0f64..10.0, 1..10),
            j in 0usize..10,
            bump in 0.0f64..5.0,
        ) {
            let j = j % r.len();
            let a = anomaly_score(Array1::from(r.clone()).view()).unwrap();
            let mut r2 = r.clone();
            r2[j] += bump;
            let b = anomaly_score(Array1::from(r2).view()).unwrap();
            prop_assert!(b >= a);
        }

        #[test]
        fn raising_alpha_never_adds_labels(
            s in proptest::collection::vec(0.0f64..5.0, 1..40),
            rbar in 0.01f64..2.0,
            a1 in 0.1f64..3.0,
            extra in 0.0f64..3.0,
        ) {
            let lo = ThresholdBase { rbar: Some(rbar), alpha: a1, window: 1 };
            let hi = ThresholdBase { rbar: Some(rbar), alpha: a1 + extra, window: 1 };
            let l1 = label(&s, &lo).unwrap();
            let l2 = label(&s, &hi).unwrap();
            prop_assert!(l1.iter().zip(&l2).all(|(a, b)| b <= a));
        }
    }
}
