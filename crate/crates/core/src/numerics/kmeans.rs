use rand::Rng;

use crate::error::{Error, Result};

use super::rng::seeded;

const MAX_ITERATIONS: usize = 100;

/// Result of a two-cluster Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans2 {
    /// Cluster index (0 or 1) per input point.
    pub assignments: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    pub iterations: usize,
}

impl KMeans2 {
    /// Indices of the points in `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Splits `points` into two groups.
///
/// Seeding: a random point becomes the first centroid and the point farthest
/// from it the second, so perfectly separated data is always recovered.
/// Iterates until no assignment changes or 100 rounds.
pub fn kmeans2(points: &[Vec<f64>], seed: u64) -> Result<KMeans2> {
    if points.len() < 2 {
        return Err(Error::invalid("kmeans2 needs at least two points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::dim("kmeans2 points have differing lengths"));
    }

    let mut rng = seeded(seed);
    let first = rng.gen_range(0..points.len());
    let mut far = first;
    let mut far_d = 0.0;
    for (i, p) in points.iter().enumerate() {
        let d = sq_dist(p, &points[first]);
        if d > far_d {
            far_d = d;
            far = i;
        }
    }
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if far_d <= (1e-12 * scale.max(1e-300)).powi(2) {
        return Err(Error::Degenerate("all points are identical".into()));
    }

    let mut centroids = [points[first].clone(), points[far].clone()];
    let mut assignments = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let c = usize::from(sq_dist(p, &centroids[1]) < sq_dist(p, &centroids[0]));
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            let mut count = 0usize;
            for (p, _) in points.iter().zip(&assignments).filter(|(_, &a)| a == c) {
                for (s, v) in sum.iter_mut().zip(p) {
                    *s += v;
                }
                count += 1;
            }
            // An emptied cluster keeps its previous centroid.
            if count > 0 {
                *centroid = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
    }
    Ok(KMeans2 {
        assignments,
        centroids,
        iterations,
    })
}
