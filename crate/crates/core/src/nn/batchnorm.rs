use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which statistics a batch-normalization layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    /// Normalize by batch statistics and blend them into the running statistics.
    Train,
    /// Normalize by the stored running statistics. No state change.
    Eval,
    /// Normalize by batch statistics and overwrite the running statistics with them.
    Adapt,
}

impl BnMode {
    fn name(self) -> &'static str {
        match self {
            BnMode::Train => "train",
            BnMode::Eval => "eval",
            BnMode::Adapt => "adapt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    /// False until the running statistics have seen a batch or were set explicitly.
    pub populated: bool,
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

impl BatchNormLayer {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("batchnorm dimension must be positive"));
        }
        Ok(Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            populated: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn set_running_stats(&mut self, mean: Array1<f64>, var: Array1<f64>) -> Result<()> {
        if mean.len() != self.dim() || var.len() != self.dim() {
            return Err(Error::config("running statistics have the wrong length"));
        }
        if var.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::config(
                "running variance must be finite and non-negative",
            ));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.populated = true;
        Ok(())
    }

    /// Per-column mean and biased variance.
    pub fn batch_stats(batch: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
        let n = batch.nrows() as f64;
        let mean = batch.sum_axis(Axis(0)) / n;
        let centered = &batch - &mean;
        let var = (&centered * &centered).sum_axis(Axis(0)) / n;
        (mean, var)
    }

    pub fn forward(&mut self, batch: ArrayView2<f64>, mode: BnMode) -> Result<Array2<f64>> {
        self.forward_cached(batch, mode).map(|(out, _)| out)
    }

    /// Eval-mode forward that cannot touch state.
    pub fn forward_eval(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(batch)?;
        if !self.populated {
            return Err(Error::state(
                "batchnorm running statistics are uninitialized; run a train or adapt pass first",
            ));
        }
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let x_hat = (&batch - &self.running_mean) * &inv_std;
        Ok(x_hat * &self.gamma + &self.beta)
    }

    pub(crate) fn forward_cached(
        &mut self,
        batch: ArrayView2<f64>,
        mode: BnMode,
    ) -> Result<(Array2<f64>, BnCache)> {
        self.check_width(batch)?;
        let (mean, var, batch_stats) = match mode {
            BnMode::Eval => {
                if !self.populated {
                    return Err(Error::state(
                        "batchnorm running statistics are uninitialized; run a train or adapt pass first",
                    ));
                }
                (self.running_mean.clone(), self.running_var.clone(), false)
            }
            BnMode::Train | BnMode::Adapt => {
                if batch.nrows() < 2 {
                    return Err(Error::BatchTooSmall {
                        mode: mode.name(),
                        rows: batch.nrows(),
                    });
                }
                let (mean, var) = Self::batch_stats(batch);
                if mode == BnMode::Train {
                    let m = self.momentum;
                    self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
                    self.running_var = &self.running_var * (1.0 - m) + &var * m;
                } else {
                    self.running_mean = mean.clone();
                    self.running_var = var.clone();
                }
                self.populated = true;
                (mean, var, true)
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let x_hat = (&batch - &mean) * &inv_std;
        let out = &x_hat * &self.gamma + &self.beta;
        Ok((
            out,
            BnCache {
                x_hat,
                inv_std,
                batch_stats,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &BnCache,
        grad_out: &Array2<f64>,
        param_grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Array2<f64> {
        if let Some((grad_gamma, grad_beta)) = param_grads {
            let gg = (grad_out * &cache.x_hat).sum_axis(Axis(0));
            let gb = grad_out.sum_axis(Axis(0));
            for (acc, g) in grad_gamma.iter_mut().zip(gg.iter()) {
                *acc += g;
            }
            for (acc, g) in grad_beta.iter_mut().zip(gb.iter()) {
                *acc += g;
            }
        }
        let grad_xhat = grad_out * &self.gamma;
        if !cache.batch_stats {
            return grad_xhat * &cache.inv_std;
        }
        let n = grad_out.nrows() as f64;
        let sum_g = grad_xhat.sum_axis(Axis(0));
        let sum_gx = (&grad_xhat * &cache.x_hat).sum_axis(Axis(0));
        let inner = &grad_xhat * n - &sum_g - &cache.x_hat * &sum_gx;
        inner * &cache.inv_std / n
    }

    fn check_width(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.dim() {
            return Err(Error::config(format!(
                "batchnorm expects {} columns, got {}",
                self.dim(),
                batch.ncols()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn train_mode_hand_example() {
        let mut bn = BatchNormLayer::new(1).unwrap();
        let out = bn
            .forward(array![[0.0], [2.0]].view(), BnMode::Train)
            .unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_abs_diff_eq!(out[[0, 0]], -expected, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[1, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[1, 0]], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn eval_with_identity_stats_is_identity() {
        let mut bn = BatchNormLayer::new(3).unwrap();
        bn.epsilon = 1e-12;
        bn.set_running_stats(Array1::zeros(3), Array1::ones(3))
            .unwrap();
        let x = array![[0.3, -2.0, 5.0], [1.0, 0.0, -1.5]];
        let out = bn.forward_eval(x.view()).unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn adapt_is_shift_invariant_and_overwrites_stats() {
        let x = array![[0.1, 3.0], [0.7, -1.0], [2.5, 0.5], [-0.4, 2.0]];
        let shifted = &x + 11.0;
        let mut a = BatchNormLayer::new(2).unwrap();
        let mut b = BatchNormLayer::new(2).unwrap();
        let out_a = a.forward(x.view(), BnMode::Adapt).unwrap();
        let out_b = b.forward(shifted.view(), BnMode::Adapt).unwrap();
        for (p, q) in out_a.iter().zip(out_b.iter()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-9);
        }
        let (mean, var) = BatchNormLayer::batch_stats(shifted.view());
        assert_eq!(b.running_mean, mean);
        assert_eq!(b.running_var, var);
    }

    #[test]
    fn eval_requires_populated_stats() {
        let bn = BatchNormLayer::new(2).unwrap();
        let err = bn.forward_eval(array![[1.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn single_row_rejected_in_batch_modes() {
        let mut bn = BatchNormLayer::new(2).unwrap();
        for mode in [BnMode::Train, BnMode::Adapt] {
            let err = bn.forward(array![[1.0, 2.0]].view(), mode).unwrap_err();
            assert!(matches!(err, Error::BatchTooSmall { rows: 1, .. }));
        }
    }

    #[test]
    fn train_output_has_beta_mean_and_gamma_squared_variance() {
        let mut bn = BatchNormLayer::new(2).unwrap();
        bn.gamma = array![2.0, 0.5];
        bn.beta = array![-1.0, 3.0];
        bn.epsilon = 1e-12;
        let x = array![
            [1.0, 10.0],
            [4.0, 20.0],
            [-2.0, 35.0],
            [7.0, 12.0],
            [0.5, 8.0]
        ];
        let out = bn.forward(x.view(), BnMode::Train).unwrap();
        let (mean, var) = BatchNormLayer::batch_stats(out.view());
        for j in 0..2 {
            assert_abs_diff_eq!(mean[j], bn.beta[j], epsilon = 1e-6);
            assert_abs_diff_eq!(var[j], bn.gamma[j] * bn.gamma[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn train_running_stats_follow_momentum() {
        let mut bn = BatchNormLayer::new(1).unwrap();
        bn.forward(array![[0.0], [2.0]].view(), BnMode::Train)
            .unwrap();
        assert_abs_diff_eq!(bn.running_mean[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(bn.running_var[0], 1.0, epsilon = 1e-12);
        bn.forward(array![[4.0], [6.0]].view(), BnMode::Train)
            .unwrap();
        assert_abs_diff_eq!(bn.running_mean[0], 0.9 * 0.1 + 0.1 * 5.0, epsilon = 1e-12);
        assert!(bn.populated);
    }
}
