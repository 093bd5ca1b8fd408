use std::io::Write;
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adaptive::AdaptiveModule;
use super::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::nn::{mse_grad, mse_loss, AdamConfig, AdamState, BnMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Reshuffle rows every epoch. When false, batches are contiguous runs of
    /// rows in time order.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 60,
            patience: 8,
            learning_rate: 1e-3,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.patience < 1 || self.max_epochs < 1 {
            return Err(Error::config("patience and max_epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(f64::NAN, |e| e.val_loss)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let to_io = |e: csv::Error| Error::data(format!("writing training log: {e}"));
        for e in &self.epochs {
            wr.serialize(e).map_err(to_io)?;
        }
        wr.flush()
            .map_err(|e| Error::data(format!("writing training log: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Splits `0..n` into consecutive chunks of `batch` rows. A trailing chunk of a
/// single row is merged into its predecessor so that every chunk can feed a
/// batch-statistics layer.
pub fn batch_ranges(n: usize, batch: usize) -> Vec<Range<usize>> {
    let batch = batch.max(1);
    let mut out: Vec<Range<usize>> = (0..n)
        .step_by(batch)
        .map(|s| s..(s + batch).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

fn epoch_order(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        idx.shuffle(&mut rng);
    }
    idx
}

struct EarlyStop {
    best: f64,
    best_epoch: usize,
    stale: usize,
    patience: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        Self {
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            patience,
        }
    }

    /// Returns true when `val` is a new best.
    fn observe(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    fn exhausted(&self) -> bool {
        self.stale >= self.patience
    }
}

/// Mean squared reconstruction error with the encoder in eval mode.
pub fn reconstruction_mse(ae: &Autoencoder, data: ArrayView2<f64>) -> Result<f64> {
    let out = ae.reconstruct_eval(data)?;
    mse_loss(out.view(), data)
}

/// Fits the autoencoder to reconstruct healthy source rows, keeping the
/// parameters with the lowest validation error.
pub fn train_autoencoder(
    mut ae: Autoencoder,
    train: ArrayView2<f64>,
    val: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(Autoencoder, TrainLog)> {
    cfg.validate()?;
    if train.nrows() < 2 {
        return Err(Error::data(format!(
            "autoencoder training needs at least 2 rows, got {}",
            train.nrows()
        )));
    }
    if val.nrows() == 0 {
        return Err(Error::data("autoencoder validation set is empty"));
    }
    let mut enc_opt = AdamState::new(&ae.encoder, cfg.adam());
    let mut dec_opt = AdamState::new(&ae.decoder, cfg.adam());
    let mut log = TrainLog::default();
    let mut stop = EarlyStop::new(cfg.patience);
    let mut best = ae.clone();

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(train.nrows(), cfg, epoch);
        let mut total = 0.0;
        for r in batch_ranges(order.len(), cfg.batch_size) {
            let batch = train.select(Axis(0), &order[r]);
            let (z, enc_trace) = ae.encoder.forward_traced(batch.view(), BnMode::Train)?;
            let (out, dec_trace) = ae.decoder.forward_traced(z.view(), BnMode::Train)?;
            let loss = mse_loss(out.view(), batch.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * batch.nrows() as f64;
            let g = mse_grad(out.view(), batch.view())?;
            let mut dec_tape = ae.decoder.zero_tape();
            let gz = ae.decoder.backward_traced(&dec_trace, &g, &mut dec_tape)?;
            let mut enc_tape = ae.encoder.zero_tape();
            ae.encoder.backward_traced(&enc_trace, &gz, &mut enc_tape)?;
            dec_opt.step(&mut ae.decoder, &dec_tape)?;
            enc_opt.step(&mut ae.encoder, &enc_tape)?;
        }
        let train_loss = total / train.nrows() as f64;
        let val_loss = reconstruction_mse(&ae, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("ae epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if stop.observe(epoch, val_loss) {
            best = ae.clone();
        } else if stop.exhausted() {
            break;
        }
    }
    log.best_epoch = stop.best_epoch;
    Ok((best, log))
}

/// Targets for the adaptive module: its input rows and the residual `x - x_hat`
/// over the compensated channels.
fn adaptive_problem(
    ae: &Autoencoder,
    h: &AdaptiveModule,
    data: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let x_hat = ae.reconstruct_eval(data)?;
    let input = h.input_from(data, x_hat.view())?;
    let residual = &data - &x_hat;
    let target = h.compensated(residual.view()).to_owned();
    Ok((input, target))
}

/// Validation error of the adaptive module under test-time conditions:
/// contiguous chunks, batchnorm in adapt mode, on a scratch copy.
pub fn adaptive_mse(
    h: &AdaptiveModule,
    input: ArrayView2<f64>,
    target: ArrayView2<f64>,
    batch: usize,
) -> Result<f64> {
    let mut scratch = h.net.clone();
    let mut sum = 0.0;
    for r in batch_ranges(input.nrows(), batch) {
        let rows = r.len() as f64;
        let rng = r.clone();
        let out = scratch.forward(input.slice(ndarray::s![rng.clone(), ..]), BnMode::Adapt)?;
        sum += mse_loss(out.view(), target.slice(ndarray::s![rng, ..]))? * rows;
    }
    Ok(sum / input.nrows() as f64)
}

/// Trains the adaptive module against the frozen autoencoder's residuals on
/// healthy target rows. The autoencoder is only read.
pub fn train_adaptive(
    ae: &Autoencoder,
    mut h: AdaptiveModule,
    train: ArrayView2<f64>,
    val: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(AdaptiveModule, TrainLog)> {
    cfg.validate()?;
    if train.nrows() < cfg.batch_size {
        return Err(Error::data(format!(
            "target training set has {} rows, fewer than one batch of {}",
            train.nrows(),
            cfg.batch_size
        )));
    }
    if val.nrows() < 2 {
        return Err(Error::data("target validation set needs at least 2 rows"));
    }
    let (tr_in, tr_target) = adaptive_problem(ae, &h, train)?;
    let (va_in, va_target) = adaptive_problem(ae, &h, val)?;
    // Start from a constant correction: zero output weights and the mean
    // residual as bias, so every output ReLU begins active. An output that
    // starts dead never receives a gradient.
    if let Some(last) = h.net.dense_layers_mut().last() {
        let mean = tr_target
            .mean_axis(Axis(0))
            .expect("non-empty training set");
        last.weights.fill(0.0);
        last.bias.assign(&mean.mapv(|v| v.max(0.0)));
    }
    let mut opt = AdamState::new(&h.net, cfg.adam());
    let mut log = TrainLog::default();
    let mut stop = EarlyStop::new(cfg.patience);
    let mut best = h.clone();

    for epoch in 1..=cfg.max_epochs {
        let order = epoch_order(tr_in.nrows(), cfg, epoch);
        let mut total = 0.0;
        for r in batch_ranges(order.len(), cfg.batch_size) {
            let idx = &order[r];
            let x = tr_in.select(Axis(0), idx);
            let t = tr_target.select(Axis(0), idx);
            let (out, trace) = h.net.forward_traced(x.view(), BnMode::Train)?;
            let loss = mse_loss(out.view(), t.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * idx.len() as f64;
            let g = mse_grad(out.view(), t.view())?;
            let mut tape = h.net.zero_tape();
            h.net.backward_traced(&trace, &g, &mut tape)?;
            opt.step(&mut h.net, &tape)?;
        }
        let train_loss = total / tr_in.nrows() as f64;
        let val_loss = adaptive_mse(&h, va_in.view(), va_target.view(), cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!("adaptive epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if stop.observe(epoch, val_loss) {
            best = h.clone();
        } else if stop.exhausted() {
            break;
        }
    }
    log.best_epoch = stop.best_epoch;
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ChannelLayout;
    use crate::models::adaptive::AdaptiveOptions;
    use rand::Rng;

    #[test]
    fn ranges_merge_single_tail() {
        assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(1, 4), vec![0..1]);
        assert!(batch_ranges(0, 4).is_empty());
    }

    #[test]
    fn constant_data_is_learned() {
        let row = [0.2, 0.7, 0.4];
        let data = Array2::from_shape_fn((128, 3), |(_, j)| row[j]);
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 50,
            patience: 50,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (ae, log) = train_autoencoder(
            Autoencoder::build(3, 1).unwrap(),
            data.view(),
            data.view(),
            &cfg,
        )
        .unwrap();
        assert!(log.best_val_loss() < 1e-3, "{}", log.best_val_loss());
        let out = ae.reconstruct_eval(data.view()).unwrap();
        for (o, d) in out.iter().zip(data.iter()) {
            assert!((o - d).abs() < 0.05);
        }
    }

    #[test]
    fn early_stopping_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train = Array2::from_shape_simple_fn((64, 4), || rng.random_range(0.0..1.0));
        let val = Array2::from_shape_simple_fn((32, 4), || rng.random_range(0.0..1.0));
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 400,
            patience: 2,
            learning_rate: 5e-2,
            ..Default::default()
        };
        let (_, log) = train_autoencoder(
            Autoencoder::build(4, 2).unwrap(),
            train.view(),
            val.view(),
            &cfg,
        )
        .unwrap();
        assert!(log.epochs.len() < 400);
        let min = log
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(log.best_val_loss(), min);
    }

    #[test]
    fn empty_training_set() {
        let e = train_autoencoder(
            Autoencoder::build(2, 0).unwrap(),
            Array2::zeros((0, 2)).view(),
            Array2::zeros((4, 2)).view(),
            &TrainConfig::default(),
        );
        assert!(matches!(e, Err(Error::Data(_))));
    }

    #[test]
    fn nan_loss_is_divergence() {
        let mut data = Array2::from_elem((8, 2), 0.5);
        data[[3, 1]] = f64::NAN;
        let cfg = TrainConfig {
            batch_size: 4,
            ..Default::default()
        };
        let e = train_autoencoder(
            Autoencoder::build(2, 0).unwrap(),
            data.view(),
            data.view(),
            &cfg,
        );
        assert!(matches!(e, Err(Error::Divergence { epoch: 1 })));
    }

    #[test]
    fn deterministic_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Array2::from_shape_simple_fn((48, 3), || rng.random_range(0.0..1.0));
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 3,
            ..Default::default()
        };
        let a =
            train_autoencoder(Autoencoder::build(3, 4).unwrap(), d.view(), d.view(), &cfg).unwrap();
        let b =
            train_autoencoder(Autoencoder::build(3, 4).unwrap(), d.view(), d.view(), &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn adaptive_training_leaves_autoencoder_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Array2::from_shape_simple_fn((96, 3), || rng.random_range(0.0..1.0));
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 3,
            ..Default::default()
        };
        let (ae, _) =
            train_autoencoder(Autoencoder::build(3, 4).unwrap(), d.view(), d.view(), &cfg).unwrap();
        let before = ae.to_bytes();
        let layout = ChannelLayout {
            measurements: 2,
            controls: 1,
        };
        let h = AdaptiveModule::build(layout, AdaptiveOptions::default(), 1).unwrap();
        let (h2, log) = train_adaptive(&ae, h.clone(), d.view(), d.view(), &cfg).unwrap();
        assert_eq!(ae.to_bytes(), before);
        assert_ne!(h2, h);
        assert!(!log.epochs.is_empty());
        let small = train_adaptive(&ae, h, d.slice(ndarray::s![..8, ..]), d.view(), &cfg);
        assert!(matches!(small, Err(Error::Data(_))));
    }
}
