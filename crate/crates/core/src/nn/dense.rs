use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Fully connected layer `y = W x + b`.
///
/// `weights` has shape `(out_dim, in_dim)`; a batch is a matrix with one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config(format!(
                "dense layer dims must be positive, got {in_dim}->{out_dim}"
            )));
        }
        let limit = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::config(format!("bad init range: {e}")))?;
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Ok(Self {
            weights,
            bias: Array1::zeros(out_dim),
        })
    }

    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::config(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weights.nrows()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        if batch.ncols() != self.in_dim() {
            return Err(Error::config(format!(
                "dense layer expects {} input columns, got {}",
                self.in_dim(),
                batch.ncols()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::config("dense layer received an empty batch"));
        }
        Ok(batch.dot(&self.weights.t()) + &self.bias)
    }

    /// Returns the gradient with respect to the input. Parameter gradients are
    /// accumulated into `grad_w` / `grad_b` when given.
    pub(crate) fn backward(
        &self,
        input: &Array2<f64>,
        grad_out: &Array2<f64>,
        param_grads: Option<(&mut [f64], &mut [f64])>,
    ) -> Array2<f64> {
        if let Some((grad_w, grad_b)) = param_grads {
            let gw = grad_out.t().dot(input);
            for (acc, g) in grad_w.iter_mut().zip(gw.iter()) {
                *acc += g;
            }
            let gb = grad_out.sum_axis(Axis(0));
            for (acc, g) in grad_b.iter_mut().zip(gb.iter()) {
                *acc += g;
            }
        }
        grad_out.dot(&self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_weights_pass_input_through() {
        let layer = DenseLayer::from_parts(Array2::eye(2), Array1::zeros(2)).unwrap();
        let out = layer.forward(array![[3.0, -1.0]].view()).unwrap();
        assert_eq!(out, array![[3.0, -1.0]]);
    }

    #[test]
    fn hand_computed_row() {
        let layer = DenseLayer::from_parts(array![[1.0, 1.0]], array![0.5]).unwrap();
        let out = layer.forward(array![[2.0, 3.0]].view()).unwrap();
        assert_eq!(out, array![[5.5]]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let layer = DenseLayer::from_parts(Array2::zeros((1, 3)), array![7.0]).unwrap();
        let out = layer.forward(array![[4.0, -2.0, 9.0]].view()).unwrap();
        assert_eq!(out, array![[7.0]]);
    }

    #[test]
    fn column_mismatch_is_config_error() {
        let layer = DenseLayer::from_parts(Array2::eye(2), Array1::zeros(2)).unwrap();
        let err = layer.forward(array![[1.0, 2.0, 3.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
