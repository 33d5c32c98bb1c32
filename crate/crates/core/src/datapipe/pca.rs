use crate::error::{Error, Result};
use crate::numerics::{gemm, sym_eig, Matrix};

use super::SensorSequence;

/// Standardise-then-project PCA fitted on training instances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance features use 1.
    pub std: Vec<f64>,
    /// `D × k`, columns are unit eigenvectors by decreasing eigenvalue.
    pub projection: Matrix,
    pub k: usize,
    /// Share of total variance carried by the kept components.
    pub explained_variance_ratio: f64,
    /// Every eigenvalue of the covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    /// Fits on an `N × D` instance matrix.
    pub fn fit_matrix(x: &Matrix, k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if k == 0 || k > d {
            return Err(Error::invalid(format!("PCA target {k} outside 1..={d}")));
        }
        if n <= k {
            return Err(Error::invalid(format!(
                "PCA to {k} components needs more than {k} instances, got {n}"
            )));
        }
        let nf = n as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / nf).collect();
        let mut var = vec![0.0; d];
        for i in 0..n {
            for (f, v) in x.row(i).iter().enumerate() {
                var[f] += (v - mean[f]).powi(2);
            }
        }
        let std: Vec<f64> = var
            .into_iter()
            .map(|v| {
                let s = (v / nf).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let z = standardise(x, &mean, &std);
        let mut cov = Matrix::zeros(d, d);
        gemm(1.0 / nf, &z, true, &z, false, 0.0, &mut cov);
        for i in 0..d {
            for j in (i + 1)..d {
                let m = 0.5 * (cov.get(i, j) + cov.get(j, i));
                cov.set(i, j, m);
                cov.set(j, i, m);
            }
        }
        let eig = sym_eig(&cov)?;
        let eigenvalues: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = eigenvalues.iter().sum();
        let kept: f64 = eigenvalues[..k].iter().sum();
        let explained_variance_ratio = if total > 0.0 { kept / total } else { 1.0 };
        Ok(PcaModel {
            mean,
            std,
            projection: eig.vectors.slice_cols(0, k),
            k,
            explained_variance_ratio,
            eigenvalues,
        })
    }

    /// Fits on every instance of the training sequences.
    pub fn fit(train: &[SensorSequence], k: usize) -> Result<Self> {
        let x = super::stack_tokens(train)?;
        Self::fit_matrix(&x, k)
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Standardises with the fitted statistics and projects: `N × D → N × k`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "PCA fitted on {} features, input has {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(standardise(x, &self.mean, &self.std).mul_unchecked(&self.projection))
    }

    /// Maps projected rows back to standardised feature space: `y·Pᵀ`.
    pub fn reconstruct_standardised(&self, y: &Matrix) -> Result<Matrix> {
        y.matmul_t(&self.projection)
    }

    pub fn apply(&self, seqs: &mut [SensorSequence]) -> Result<()> {
        for s in seqs.iter_mut() {
            s.tokens = self.transform(&s.tokens)?;
        }
        Ok(())
    }
}

fn standardise(x: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - mean[j]) / std[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        let base = Matrix::gaussian(n, d, 1.0, &mut rng);
        // Correlate the features so the spectrum is not flat.
        let mix = Matrix::gaussian(d, d, 1.0, &mut rng);
        base.matmul(&mix).unwrap()
    }

    #[test]
    fn points_on_diagonal_need_one_component() {
        let x = Matrix::from_fn(10, 2, |i, _| i as f64);
        let p = PcaModel::fit_matrix(&x, 1).unwrap();
        assert!((p.explained_variance_ratio - 1.0).abs() < 1e-12);
        let c = p.projection.data();
        assert!((c[0].abs() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((c[1].abs() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn full_rank_reconstructs() {
        let x = gaussian(40, 6, 3);
        let p = PcaModel::fit_matrix(&x, 6).unwrap();
        let z = standardise(&x, &p.mean, &p.std);
        let back = p.reconstruct_standardised(&p.transform(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&z) < 1e-5);
        let gram = p.projection.t_matmul(&p.projection).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(6)) < 1e-6);
    }

    #[test]
    fn explained_variance_matches_eigen_mass() {
        let x = gaussian(200, 8, 5);
        let p = PcaModel::fit_matrix(&x, 4).unwrap();
        // Independent oracle: variance of the projected scores over the
        // trace of the standardised covariance (= D, each feature has unit
        // variance).
        let y = p.transform(&x).unwrap();
        let n = y.rows() as f64;
        let mut captured = 0.0;
        for j in 0..4 {
            let col: Vec<f64> = (0..y.rows()).map(|i| y.get(i, j)).collect();
            let mu = col.iter().sum::<f64>() / n;
            captured += col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        }
        assert!((p.explained_variance_ratio - captured / 8.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_k() {
        let x = gaussian(10, 3, 1);
        assert!(matches!(PcaModel::fit_matrix(&x, 4), Err(Error::Validation(_))));
        assert!(matches!(PcaModel::fit_matrix(&x, 0), Err(Error::Validation(_))));
        assert!(PcaModel::fit_matrix(&gaussian(3, 3, 1), 3).is_err());
    }

    #[test]
    fn constant_feature_gets_unit_divisor() {
        let x = Matrix::from_fn(5, 2, |i, j| if j == 0 { 7.0 } else { i as f64 });
        let p = PcaModel::fit_matrix(&x, 2).unwrap();
        assert_eq!(p.std[0], 1.0);
        assert!(p.transform(&x).unwrap().all_finite());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn ratio_non_decreasing_in_k(seed in 0u64..1000) {
            let x = gaussian(30, 6, seed);
            let mut last = 0.0;
            for k in 1..=6 {
                let r = PcaModel::fit_matrix(&x, k).unwrap().explained_variance_ratio;
                proptest::prop_assert!(r >= last - 1e-12);
                last = r;
            }
            proptest::prop_assert!((last - 1.0).abs() < 1e-9);
        }
    }
}
