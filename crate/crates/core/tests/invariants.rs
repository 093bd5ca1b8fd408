//! Property tests for the contracts that hold on every input, not just on
//! hand-picked examples.

use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taad::adaptation::Detector;
use taad::data::{make_splits, ChannelLayout, NamedRange, SplitPlan, TimeRange, TimeSeriesDataset};
use taad::models::{AdaptiveModule, AdaptiveOptions, Autoencoder, TaadModel};
use taad::nn::{BatchNormLayer, BnMode};
use taad::simulator::{inject_fault, pump_schema, FaultSpec};

fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-3.0..3.0))
}

fn warmed(k: usize, seed: u64) -> Autoencoder {
    let mut ae = Autoencoder::build(k, seed).unwrap();
    ae.reconstruct(uniform(32, k, seed ^ 1).view(), BnMode::Adapt)
        .unwrap();
    ae
}

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2001, 3, 1, 0, 0, 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batchnorm_train_output_has_beta_mean_and_gamma_variance(
        rows in 2usize..20, dim in 1usize..6, seed in any::<u64>(),
        gamma in 0.2f64..3.0, beta in -2.0f64..2.0,
    ) {
        let mut x = uniform(rows, dim, seed);
        // keep epsilon negligible next to the batch variance
        x.column_mut(0)[0] += 5.0;
        let mut bn = BatchNormLayer::new(dim).unwrap();
        bn.epsilon = 1e-12;
        bn.gamma.fill(gamma);
        bn.beta.fill(beta);
        let out = bn.forward(x.view(), BnMode::Train).unwrap();
        let mean = out.mean_axis(Axis(0)).unwrap();
        let var = out.var_axis(Axis(0), 0.0);
        for j in 0..dim {
            let (_, v) = BatchNormLayer::batch_stats(x.column(j).insert_axis(Axis(1)));
            if v[0] > 1e-6 {
                prop_assert!((mean[j] - beta).abs() < 1e-6);
                prop_assert!((var[j] - gamma * gamma).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batchnorm_adapt_overwrites_and_eval_is_pure(
        rows in 2usize..20, dim in 1usize..6, seed in any::<u64>(),
    ) {
        let mut bn = BatchNormLayer::new(dim).unwrap();
        bn.forward(uniform(rows, dim, seed ^ 7).view(), BnMode::Train).unwrap();
        let x = uniform(rows, dim, seed);
        bn.forward(x.view(), BnMode::Adapt).unwrap();
        let (mean, var) = BatchNormLayer::batch_stats(x.view());
        prop_assert_eq!(&bn.running_mean, &mean);
        prop_assert_eq!(&bn.running_var, &var);
        let before = bn.clone();
        let a = bn.forward(x.view(), BnMode::Eval).unwrap();
        let b = bn.forward(x.view(), BnMode::Eval).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(bn, before);
    }

    #[test]
    fn taad_prediction_is_reconstruction_plus_padded_delta(
        x_dim in 1usize..6, w_dim in 1usize..5, seed in any::<u64>(),
    ) {
        let k = x_dim + w_dim;
        let layout = ChannelLayout { measurements: x_dim, controls: w_dim };
        let h = AdaptiveModule::build(layout, AdaptiveOptions::default(), seed).unwrap();
        let mut m = TaadModel::new(warmed(k, seed), h).unwrap();
        let batch = uniform(16, k, seed ^ 3);
        let pred = m.predict(batch.view(), true).unwrap();
        let recon = m.ae.reconstruct_eval(batch.view()).unwrap();
        let input = m.adaptive.input_from(batch.view(), recon.view()).unwrap();
        let delta = m.adaptive.delta(input.view(), false).unwrap();
        let padded = m.adaptive.pad(delta);
        for (d, e) in (&pred - &recon).iter().zip(padded.iter()) {
            prop_assert!((d - e).abs() <= 1e-12 * (1.0 + e.abs()));
            prop_assert!(*e >= 0.0);
        }
    }

    #[test]
    fn restoring_adabn_statistics_restores_baseline(
        k in 2usize..8, seed in any::<u64>(),
    ) {
        let ae = warmed(k, seed);
        let snap = ae.bn_snapshot();
        let x = uniform(24, k, seed ^ 5);
        let expected = ae.reconstruct_eval(x.view()).unwrap();
        let mut d = Detector::AdaBn(ae);
        d.predict(uniform(16, k, seed ^ 9).view()).unwrap();
        let Detector::AdaBn(mut after) = d else { unreachable!() };
        after.restore_bn(&snap);
        prop_assert_eq!(after.reconstruct_eval(x.view()).unwrap(), expected);
    }

    #[test]
    fn split_segments_are_disjoint_and_inside_their_ranges(
        cuts in proptest::collection::btree_set(1i64..399, 3),
        faults in proptest::collection::vec(0i64..400, 0..3),
    ) {
        let c: Vec<i64> = cuts.into_iter().collect();
        let day = |d: i64| t0() + Duration::days(d);
        let range = |a: i64, b: i64| TimeRange::new(day(a), day(b)).unwrap();
        let plan = SplitPlan {
            train: range(0, c[0]),
            validation: range(c[0], c[1]),
            tests: vec![NamedRange { name: "normal".into(), range: range(c[2], 400) }],
            reported_faults: faults.iter().map(|&f| day(f)).collect(),
            exclusion_days: 20,
        };
        let n = 400 * 4;
        let ts: Vec<_> = (0..n).map(|i| t0() + Duration::hours(6 * i)).collect();
        let data = TimeSeriesDataset::new(pump_schema(), ts, Array2::zeros((n as usize, 14))).unwrap();
        let Ok(s) = make_splits(&data, &plan) else {
            // everything in the training range was excluded
            return Ok(());
        };
        let segments = [(&s.train, plan.train), (&s.validation, plan.validation), (&s.tests[0].1, plan.tests[0].range)];
        let mut all = Vec::new();
        for (seg, r) in segments {
            for t in &seg.timestamps {
                prop_assert!(r.contains(t));
                prop_assert!(!plan.is_excluded(t));
                all.push(*t);
            }
        }
        let total = all.len();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), total);
    }

    #[test]
    fn faults_never_touch_rows_before_onset(
        onset_day in 0.0f64..30.0, ramp in 0.0f64..10.0, severity in 0.0f64..2.0, seed in any::<u64>(),
    ) {
        let n = 30 * 48;
        let ts: Vec<_> = (0..n).map(|i| t0() + Duration::minutes(30 * i)).collect();
        let mut data = TimeSeriesDataset::new(pump_schema(), ts, uniform(n as usize, 14, seed)).unwrap();
        let before = data.clone();
        let spec = FaultSpec {
            kind: "primary-seal-drift".into(),
            onset: t0() + Duration::minutes((onset_day * 1440.0) as i64),
            ramp_days: ramp,
            channels: vec!["de_seal_pressure".into(), "de_seal_temperature".into()],
            severity,
            detection_lag_days: 5.0,
            maintenance_days: 30.0,
        };
        let mut health = vec![0u8; data.len()];
        inject_fault(&mut data, &mut health, &spec).unwrap();
        for (i, t) in data.timestamps.iter().enumerate() {
            if *t < spec.onset {
                prop_assert_eq!(data.values.row(i), before.values.row(i));
                prop_assert_eq!(health[i], 0);
            }
        }
    }
}
