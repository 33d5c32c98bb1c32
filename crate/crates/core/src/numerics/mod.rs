//! Dense linear algebra and the small statistical kernels the rest of the
//! crate is built on.

mod adam;
mod eigen;
mod gradcheck;
mod kmeans;
mod matrix;
pub mod rng;

pub use adam::{Adam, AdamState};
pub use eigen::{sym_eig, SymEig};
pub use gradcheck::{finite_diff_grad_check, Differentiable, GradCheckConfig, GradCheckReport};
pub use kmeans::{kmeans2, KMeans2};
pub use matrix::Matrix;
pub(crate) use matrix::gemm;

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the first.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
