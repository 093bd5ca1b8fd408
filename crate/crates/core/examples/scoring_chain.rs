//! Turns a reconstruction into anomaly labels and flagged days on a small
//! hand-made series: a level step in one channel on the third day.
//!
//! cargo run --example scoring_chain

use chrono::{Duration, TimeZone, Utc};
use ndarray::Array2;
use taad::scoring::{anomaly_scores, ResidualScaler, ScoreSeries, ThresholdBase};

fn main() -> taad::Result<()> {
    let t0 = Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap();
    let n = 4 * 24;
    let ts: Vec<_> = (0..n).map(|i| t0 + Duration::hours(i as i64)).collect();
    let healthy = Array2::from_shape_fn((n, 3), |(i, j)| 0.5 + 0.02 * ((i * (j + 3)) as f64).sin());
    let mut observed = healthy.clone();
    for i in 50..n {
        observed[[i, 1]] += 0.3;
    }
    // a perfect model of the healthy process
    let reconstruction = healthy.clone();

    let rs = ResidualScaler::fit(healthy.view())?;
    let calib = anomaly_scores(
        rs.relative_residuals((&healthy * 0.98).view(), healthy.view())?
            .view(),
    )?;
    let base = ThresholdBase::fit(&calib, 1.5, 6)?;
    let series = ScoreSeries::compute(ts, reconstruction.view(), observed.view(), &rs, &base, 0)?;

    println!("threshold {:.4}", base.threshold()?);
    for d in &series.days {
        println!(
            "{}  abnormal samples {:>2}  flagged {}",
            d.date, d.count, d.flagged
        );
    }
    Ok(())
}
