use crate::error::{Error, Result};

use super::Matrix;

const SYMMETRY_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Sorted descending; equal values keep their original order.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigensolver.
///
/// Each eigenvector is sign-normalised so that its largest-magnitude
/// component is positive.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::invalid(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            s.shape()
        )));
    }
    let scale = s.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if !s.is_symmetric(SYMMETRY_TOL * scale) {
        return Err(Error::invalid("matrix is not symmetric"));
    }
    if n == 0 {
        return Ok(SymEig {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        });
    }

    let mut a = s.data().to_vec();
    // Symmetrise exactly so rotations act on a truly symmetric matrix.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = Matrix::identity(n).into_data();
    let total: f64 = a.iter().map(|x| x * x).sum();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= 1e-30 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, n, p, q, c, sn);
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps first-occurrence order for ties.
    order.sort_by(|&x, &y| diag[y].partial_cmp(&diag[x]).unwrap_or(std::cmp::Ordering::Equal));

    let values = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|k| v[k * n + src]).collect();
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (k, x) in col.into_iter().enumerate() {
            vectors.set(k, dst, x);
        }
    }
    Ok(SymEig { values, vectors })
}

/// Applies the Jacobi rotation `Jᵀ A J` zeroing `a[p][q]`.
fn rotate(a: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let akp = a[k * n + p];
        let akq = a[k * n + q];
        a[k * n + p] = c * akp - s * akq;
        a[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[p * n + k];
        let aqk = a[q * n + k];
        a[p * n + k] = c * apk - s * aqk;
        a[q * n + k] = s * apk + c * aqk;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        let g = Matrix::gaussian(n, n, 1.0, &mut rng);
        g.add(&g.transpose()).unwrap().scale(0.5)
    }

    #[test]
    fn diagonal_case() {
        let s = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = sym_eig(&s).unwrap();
        assert_eq!(e.values, vec![2.0, 1.0]);
        assert_eq!(e.vectors, Matrix::identity(2));
    }

    #[test]
    fn swap_matrix() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = sym_eig(&s).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(sym_eig(&s), Err(Error::Validation(_))));
        assert!(sym_eig(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        for seed in 0..5 {
            let s = random_symmetric(8, seed);
            let e = sym_eig(&s).unwrap();
            let v = &e.vectors;
            let lambda = Matrix::from_fn(8, 8, |i, j| if i == j { e.values[i] } else { 0.0 });
            let rebuilt = v.matmul(&lambda).unwrap().matmul_t(v).unwrap();
            assert!(rebuilt.max_abs_diff(&s) < 1e-6);
            let gram = v.t_matmul(v).unwrap();
            assert!(gram.max_abs_diff(&Matrix::identity(8)) < 1e-6);
            for w in e.values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            for i in 0..8 {
                let col = v.slice_cols(i, i + 1);
                let sv = s.matmul(&col).unwrap();
                assert!(sv.max_abs_diff(&col.scale(e.values[i])) < 1e-6);
            }
        }
    }
}
