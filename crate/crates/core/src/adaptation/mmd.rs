use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    batch_ranges, reconstruction_mse, Autoencoder, EpochRecord, TrainConfig, TrainLog,
};
use crate::nn::{mse_grad, mse_loss, AdamConfig, AdamState, BnMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Biased,
    Unbiased,
}

/// Gaussian kernel bandwidth: a fixed value or the median pairwise distance.
/// Written as a number or the string `"median-heuristic"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    MedianHeuristic,
}

const MEDIAN_TAG: &str = "median-heuristic";

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
            Bandwidth::MedianHeuristic => s.serialize_str(MEDIAN_TAG),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bandwidth::Fixed(v)),
            Raw::Text(t) if t == MEDIAN_TAG => Ok(Bandwidth::MedianHeuristic),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "bandwidth must be a number or \"{MEDIAN_TAG}\", got `{t}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmdConfig {
    pub sigma: Bandwidth,
    pub lambda: f64,
    pub estimator: Estimator,
    /// Rows drawn from each domain when estimating the median bandwidth.
    pub bandwidth_sample: usize,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            sigma: Bandwidth::MedianHeuristic,
            lambda: 1.0,
            estimator: Estimator::Biased,
            bandwidth_sample: 400,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(s) = self.sigma {
            check_sigma(s)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("mmd lambda must be a non-negative number"));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )))
    }
}

fn sq_dist(a: ArrayView2<f64>, i: usize, b: ArrayView2<f64>, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j).iter())
        .map(|(u, v)| (u - v) * (u - v))
        .sum()
}

fn check_sets(a: ArrayView2<f64>, b: ArrayView2<f64>, est: Estimator) -> Result<()> {
    if a.ncols() != b.ncols() {
        return Err(Error::config("mmd feature sets differ in width"));
    }
    let min = match est {
        Estimator::Biased => 1,
        Estimator::Unbiased => 2,
    };
    if a.nrows() < min || b.nrows() < min {
        return Err(Error::config(format!(
            "mmd estimator needs at least {min} rows per set"
        )));
    }
    Ok(())
}

/// Mean kernel value over pairs of rows; with `skip_diag`, pairs `(i, i)` are left out.
fn kernel_mean(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64, skip_diag: bool) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            if skip_diag && i == j {
                continue;
            }
            sum += (-gamma * sq_dist(a, i, b, j)).exp();
        }
    }
    let pairs = if skip_diag {
        a.nrows() * (a.nrows() - 1)
    } else {
        a.nrows() * b.nrows()
    };
    sum / pairs as f64
}

/// Squared maximum mean discrepancy with kernel `exp(-|u-v|^2 / (2 sigma^2))`.
pub fn mmd_squared(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    sigma: f64,
    est: Estimator,
) -> Result<f64> {
    check_sigma(sigma)?;
    check_sets(a, b, est)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let unbiased = est == Estimator::Unbiased;
    Ok(
        kernel_mean(a, a, gamma, unbiased) + kernel_mean(b, b, gamma, unbiased)
            - 2.0 * kernel_mean(a, b, gamma, false),
    )
}

/// [`mmd_squared`] and its gradients with respect to every row of `a` and `b`.
pub fn mmd_squared_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    sigma: f64,
    est: Estimator,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_sigma(sigma)?;
    check_sets(a, b, est)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let (caa, cbb) = match est {
        Estimator::Biased => (1.0 / (n * n), 1.0 / (m * m)),
        Estimator::Unbiased => (1.0 / (n * (n - 1.0)), 1.0 / (m * (m - 1.0))),
    };
    let cab = 2.0 / (n * m);
    let unbiased = est == Estimator::Unbiased;
    let mut ga = Array2::zeros(a.raw_dim());
    let mut gb = Array2::zeros(b.raw_dim());
    let mut value = 0.0;

    // d k(u, v) / du = -2 gamma k (u - v)
    let mut within = |x: ArrayView2<f64>, g: &mut Array2<f64>, c: f64| {
        for i in 0..x.nrows() {
            for j in 0..x.nrows() {
                if i == j {
                    if !unbiased {
                        value += c;
                    }
                    continue;
                }
                let k = (-gamma * sq_dist(x, i, x, j)).exp();
                value += c * k;
                // both orderings (i, j) and (j, i) touch row i
                let f = -2.0 * gamma * k * c * 2.0;
                for d in 0..x.ncols() {
                    g[[i, d]] += f * (x[[i, d]] - x[[j, d]]);
                }
            }
        }
    };
    within(a, &mut ga, caa);
    within(b, &mut gb, cbb);
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let k = (-gamma * sq_dist(a, i, b, j)).exp();
            value -= cab * k;
            let f = 2.0 * gamma * k * cab;
            for d in 0..a.ncols() {
                let diff = a[[i, d]] - b[[j, d]];
                ga[[i, d]] += f * diff;
                gb[[j, d]] -= f * diff;
            }
        }
    }
    Ok((value, ga, gb))
}

/// Median of the pairwise Euclidean distances among the rows of `x`.
/// Falls back to 1 when every row coincides.
pub fn median_bandwidth(x: ArrayView2<f64>) -> f64 {
    let mut d = Vec::with_capacity(x.nrows() * x.nrows().saturating_sub(1) / 2);
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            d.push(sq_dist(x, i, x, j).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn subsample(x: ArrayView2<f64>, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    if x.nrows() <= n {
        return x.to_owned();
    }
    let mut idx = sample(rng, x.nrows(), n).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

/// Eval-mode latent codes of subsamples of both domains.
pub fn latent_samples(
    ae: &Autoencoder,
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    n: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = subsample(source, n, &mut rng);
    let t = subsample(target, n, &mut rng);
    Ok((ae.encode_eval(s.view())?, ae.encode_eval(t.view())?))
}

/// Bottleneck discrepancy between the two domains, measured in eval mode.
pub fn latent_mmd(
    ae: &Autoencoder,
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    sigma: f64,
    cfg: &MmdConfig,
    seed: u64,
) -> Result<f64> {
    let (zs, zt) = latent_samples(ae, source, target, cfg.bandwidth_sample, seed)?;
    mmd_squared(zs.view(), zt.view(), sigma, cfg.estimator)
}

/// Bandwidth used for fine-tuning: fixed, or the median distance among the
/// pre-fine-tuning latent codes of both domains pooled.
pub fn resolve_bandwidth(
    ae: &Autoencoder,
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
    cfg: &MmdConfig,
    seed: u64,
) -> Result<f64> {
    match cfg.sigma {
        Bandwidth::Fixed(s) => check_sigma(s).map(|_| s),
        Bandwidth::MedianHeuristic => {
            let (zs, zt) = latent_samples(ae, source, target, cfg.bandwidth_sample, seed)?;
            Ok(median_bandwidth(concatenate![Axis(0), zs, zt].view()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct MmdOutcome {
    pub ae: Autoencoder,
    pub log: TrainLog,
    pub sigma: f64,
}

/// Fine-tunes a pretrained autoencoder on healthy target rows while pulling
/// the bottleneck codes of source and target batches together.
///
/// Each step concatenates a random source batch with a target batch and runs
/// the encoder over both in training mode, so batch statistics are pooled.
/// The loss is the target reconstruction error plus `lambda` times the
/// squared discrepancy between the two halves of the code.
pub fn mmd_finetune(
    mut ae: Autoencoder,
    source: ArrayView2<f64>,
    target_train: ArrayView2<f64>,
    target_val: ArrayView2<f64>,
    mmd: &MmdConfig,
    cfg: &TrainConfig,
) -> Result<MmdOutcome> {
    mmd.validate()?;
    cfg.validate()?;
    if source.nrows() < 2 || target_train.nrows() < 2 {
        return Err(Error::data(
            "mmd fine-tuning needs at least 2 rows in each domain",
        ));
    }
    if target_val.nrows() == 0 {
        return Err(Error::data("mmd fine-tuning validation set is empty"));
    }
    let sigma = resolve_bandwidth(&ae, source, target_train, mmd, cfg.seed)?;
    log::info!("mmd bandwidth {sigma:.4}");
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut enc_opt = AdamState::new(&ae.encoder, adam);
    let mut dec_opt = AdamState::new(&ae.decoder, adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5151);
    let mut log = TrainLog::default();
    let mut best = ae.clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..target_train.nrows()).collect();
        if cfg.shuffle {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        }
        let mut total = 0.0;
        for r in batch_ranges(order.len(), cfg.batch_size) {
            let t = target_train.select(Axis(0), &order[r]);
            let nt = t.nrows();
            let mut sidx = sample(&mut rng, source.nrows(), nt.min(source.nrows())).into_vec();
            sidx.sort_unstable();
            let s_batch = source.select(Axis(0), &sidx);
            let ns = s_batch.nrows();
            let joint = concatenate![Axis(0), s_batch, t];
            let (z, enc_trace) = ae.encoder.forward_traced(joint.view(), BnMode::Train)?;
            let zt = z.slice(s![ns.., ..]).to_owned();
            let (out, dec_trace) = ae.decoder.forward_traced(zt.view(), BnMode::Train)?;
            let rec = mse_loss(out.view(), t.view())?;
            let g_out = mse_grad(out.view(), t.view())?;
            let mut dec_tape = ae.decoder.zero_tape();
            let g_zt = ae
                .decoder
                .backward_traced(&dec_trace, &g_out, &mut dec_tape)?;

            let mut g_z = Array2::zeros(z.raw_dim());
            g_z.slice_mut(s![ns.., ..]).assign(&g_zt);
            let mut disc = 0.0;
            if mmd.lambda > 0.0 {
                let (v, gs, gt) =
                    mmd_squared_grad(z.slice(s![..ns, ..]), zt.view(), sigma, mmd.estimator)?;
                disc = v;
                g_z.slice_mut(s![..ns, ..]).scaled_add(mmd.lambda, &gs);
                g_z.slice_mut(s![ns.., ..]).scaled_add(mmd.lambda, &gt);
            }
            let loss = rec + mmd.lambda * disc;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * nt as f64;
            let mut enc_tape = ae.encoder.zero_tape();
            ae.encoder
                .backward_traced(&enc_trace, &g_z, &mut enc_tape)?;
            dec_opt.step(&mut ae.decoder, &dec_tape)?;
            enc_opt.step(&mut ae.encoder, &enc_tape)?;
        }
        let train_loss = total / target_train.nrows() as f64;
        let val_loss = reconstruction_mse(&ae, target_val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("mmd epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = ae.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(MmdOutcome {
        ae: best,
        log,
        sigma,
    })
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn biased_is_non_negative(
            a in proptest::collection::vec(-3.0f64..3.0, 2..16),
            b in proptest::collection::vec(-3.0f64..3.0, 2..16),
            sigma in 0.05f64..5.0,
        ) {
            let a = Array2::from_shape_vec((a.len() / 2, 2), a[..a.len() / 2 * 2].to_vec()).unwrap();
            let b = Array2::from_shape_vec((b.len() / 2, 2), b[..b.len() / 2 * 2].to_vec()).unwrap();
            let v = mmd_squared(a.view(), b.view(), sigma, Estimator::Biased).unwrap();
            prop_assert!(v >= -1e-12);
        }
    }
}
