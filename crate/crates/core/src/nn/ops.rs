use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub fn relu(batch: ArrayView2<f64>) -> Array2<f64> {
    batch.mapv(|v| v.max(0.0))
}

/// Mean over all elements of the squared difference.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(pred, target)?;
    if pred.is_empty() {
        return Err(Error::config("mse of empty matrices"));
    }
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_same_shape(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    Ok((&pred - &target) * scale)
}

fn check_same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_cases() {
        assert_eq!(
            relu(array![[-1.0, 0.0, 2.0]].view()),
            array![[0.0, 0.0, 2.0]]
        );
        let pos = array![[0.5, 3.0], [1.0, 9.0]];
        assert_eq!(relu(pos.view()), pos);
        assert_eq!(relu(array![[-0.5, -3.0]].view()), array![[0.0, 0.0]]);
    }

    #[test]
    fn mse_examples() {
        let t = array![[0.0, 0.0]];
        assert_eq!(mse_loss(t.view(), t.view()).unwrap(), 0.0);
        assert_eq!(mse_loss(array![[1.0, 1.0]].view(), t.view()).unwrap(), 1.0);
        let p = array![[0.3, -0.2], [1.0, 0.5]];
        let q = array![[0.1, 0.1], [0.0, 0.5]];
        let base = mse_loss(p.view(), q.view()).unwrap();
        let scaled = (&p - &q) * 3.0 + &q;
        let l3 = mse_loss(scaled.view(), q.view()).unwrap();
        assert!((l3 - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn mse_shape_mismatch() {
        let err = mse_loss(array![[1.0]].view(), array![[1.0, 2.0]].view()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
