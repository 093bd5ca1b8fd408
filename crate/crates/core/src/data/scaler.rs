use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Per-channel min-max scaling fitted on training rows. Values outside the
/// training range are extrapolated, never clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Array1<f64>,
    pub max: Array1<f64>,
}

impl MinMaxScaler {
    pub fn fit(train: ArrayView2<f64>) -> Result<Self> {
        if train.nrows() == 0 {
            return Err(Error::data("cannot fit a scaler on zero rows"));
        }
        if train.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(
                "scaler input contains missing or non-finite values",
            ));
        }
        let min = train.fold_axis(Axis(0), f64::INFINITY, |a, b| a.min(*b));
        let max = train.fold_axis(Axis(0), f64::NEG_INFINITY, |a, b| a.max(*b));
        for (j, (lo, hi)) in min.iter().zip(max.iter()).enumerate() {
            if lo == hi {
                log::warn!("channel {j} is constant in training data; scaling by 1");
            }
        }
        Ok(Self { min, max })
    }

    pub fn from_parts(min: Array1<f64>, max: Array1<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::config("scaler min/max lengths differ"));
        }
        if min
            .iter()
            .zip(max.iter())
            .any(|(lo, hi)| hi.is_nan() || lo.is_nan() || hi < lo)
        {
            return Err(Error::config("scaler max must be >= min for every channel"));
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    fn range(&self) -> Array1<f64> {
        (&self.max - &self.min).mapv(|r| if r > 0.0 { r } else { 1.0 })
    }

    pub fn transform(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data)?;
        Ok((&data - &self.min) / &self.range())
    }

    pub fn inverse_transform(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(data)?;
        Ok(&data * &self.range() + &self.min)
    }

    fn check(&self, data: ArrayView2<f64>) -> Result<()> {
        if data.ncols() != self.width() {
            return Err(Error::config(format!(
                "scaler fitted on {} channels, got {}",
                self.width(),
                data.ncols()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let s = MinMaxScaler::fit(array![[2.0], [4.0], [6.0]].view()).unwrap();
        let out = s.transform(array![[2.0], [4.0], [6.0]].view()).unwrap();
        assert_eq!(out, array![[0.0], [0.5], [1.0]]);
    }

    #[test]
    fn extrapolates_without_clipping() {
        let s = MinMaxScaler::fit(array![[2.0], [6.0]].view()).unwrap();
        let out = s.transform(array![[8.0], [0.0]].view()).unwrap();
        assert_eq!(out, array![[1.5], [-0.5]]);
    }

    #[test]
    fn constant_channel_is_shifted_only() {
        let s = MinMaxScaler::fit(array![[3.0, 1.0], [3.0, 2.0]].view()).unwrap();
        let out = s.transform(array![[3.0, 1.0], [5.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[0.0, 0.0], [2.0, 1.0]]);
    }

    proptest! {
        #[test]
        fn training_rows_land_in_unit_interval(
            rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..30)
        ) {
            let n = rows.len();
            let data = Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
            let s = MinMaxScaler::fit(data.view()).unwrap();
            let t = s.transform(data.view()).unwrap();
            prop_assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = s.inverse_transform(t.view()).unwrap();
            for ((a, b), j) in back.iter().zip(data.iter()).zip((0..3).cycle()) {
                if s.max[j] > s.min[j] {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }
}
