use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SensorSequence;

/// Per-feature min-max scaling onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits on every instance (row) of the training sequences.
    pub fn fit(train: &[SensorSequence]) -> Result<Self> {
        let d = train
            .iter()
            .find(|s| s.tokens.rows() > 0)
            .map(SensorSequence::features)
            .ok_or_else(|| Error::invalid("min-max fit needs at least one instance"))?;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for s in train {
            if s.features() != d {
                return Err(Error::dim("sequences differ in feature count"));
            }
            for i in 0..s.tokens.rows() {
                for (f, &v) in s.tokens.row(i).iter().enumerate() {
                    min[f] = min[f].min(v);
                    max[f] = max[f].max(v);
                }
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn features(&self) -> usize {
        self.min.len()
    }

    /// `(x − min) / (max − min)` clipped to `[0, 1]`; constant features map to 0.
    pub fn transform_value(&self, f: usize, x: f64) -> f64 {
        let range = self.max[f] - self.min[f];
        if range <= 0.0 {
            0.0
        } else {
            ((x - self.min[f]) / range).clamp(0.0, 1.0)
        }
    }

    pub fn apply(&self, seqs: &mut [SensorSequence]) -> Result<()> {
        for s in seqs.iter_mut() {
            if s.features() != self.features() {
                return Err(Error::dim(format!(
                    "scaler fitted on {} features, sequence has {}",
                    self.features(),
                    s.features()
                )));
            }
            for i in 0..s.tokens.rows() {
                for (f, v) in s.tokens.row_mut(i).iter_mut().enumerate() {
                    *v = self.transform_value(f, *v);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn column(values: &[f64]) -> SensorSequence {
        let m = Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap();
        SensorSequence::new(m, 0, None)
    }

    #[test]
    fn spreads_onto_unit_interval() {
        let mut s = vec![column(&[2.0, 4.0, 6.0])];
        let sc = MinMaxScaler::fit(&s).unwrap();
        sc.apply(&mut s).unwrap();
        assert_eq!(s[0].tokens.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let mut s = vec![column(&[5.0, 5.0])];
        let sc = MinMaxScaler::fit(&s).unwrap();
        sc.apply(&mut s).unwrap();
        assert_eq!(s[0].tokens.data(), &[0.0, 0.0]);
    }

    #[test]
    fn out_of_range_clipped() {
        let sc = MinMaxScaler::fit(&[column(&[2.0, 6.0])]).unwrap();
        let mut test = vec![column(&[8.0, -1.0, 3.0])];
        sc.apply(&mut test).unwrap();
        assert_eq!(test[0].tokens.data(), &[1.0, 0.0, (3.0 - 2.0) / (6.0 - 2.0)]);
    }

    #[test]
    fn empty_fit_rejected() {
        assert!(MinMaxScaler::fit(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn everything_lands_in_unit_interval(
            train in proptest::collection::vec(-1e3f64..1e3, 1..40),
            other in proptest::collection::vec(-1e4f64..1e4, 1..40),
        ) {
            let mut tr = vec![column(&train)];
            let sc = MinMaxScaler::fit(&tr).unwrap();
            sc.apply(&mut tr).unwrap();
            let mut te = vec![column(&other)];
            sc.apply(&mut te).unwrap();
            for v in tr[0].tokens.data().iter().chain(te[0].tokens.data()) {
                proptest::prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
