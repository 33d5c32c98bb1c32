use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::seeded;
use crate::numerics::Matrix;

/// Smallest variance a component may take.
pub const VARIANCE_FLOOR: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;
/// Stop once the mean per-instance log-likelihood improves by less.
const TOLERANCE: f64 = 1e-6;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `M × D`
    pub means: Vec<Vec<f64>>,
    /// `M × D`
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.components();
        if m == 0 || self.means.len() != m || self.variances.len() != m {
            return Err(Error::invalid("mixture needs matching weights, means and variances"));
        }
        let d = self.dim();
        if self.means.iter().chain(&self.variances).any(|v| v.len() != d) {
            return Err(Error::dim("mixture components differ in dimension"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must be a probability vector"));
        }
        if self.variances.iter().flatten().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("negative variance"));
        }
        Ok(())
    }

    /// Mixture mean `Σ w_m μ_m`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (o, m) in out.iter_mut().zip(mu) {
                *o += w * m;
            }
        }
        out
    }

    /// Per-feature variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut out = vec![0.0; self.dim()];
        for ((w, mu), var) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for f in 0..out.len() {
                out[f] += w * (var[f] + (mu[f] - mean[f]).powi(2));
            }
        }
        out
    }

    /// Variance of `u·x` for a direction `u`.
    pub fn variance_along(&self, u: &[f64]) -> f64 {
        let proj_mean: f64 = self.mean().iter().zip(u).map(|(a, b)| a * b).sum();
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, mu), var)| {
                let within: f64 = var.iter().zip(u).map(|(v, x)| v * x * x).sum();
                let m: f64 = mu.iter().zip(u).map(|(a, b)| a * b).sum();
                w * (within + (m - proj_mean).powi(2))
            })
            .sum()
    }

    /// Per-row `log p(x)` and, when requested, the responsibilities.
    fn e_step(&self, x: &Matrix, resp: Option<&mut Matrix>) -> f64 {
        let (n, d) = x.shape();
        let m = self.components();
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let consts: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.variances)
            .map(|(w, var)| {
                if *w <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    w.ln() - 0.5 * (d as f64 * ln2pi + var.iter().map(|v| v.ln()).sum::<f64>())
                }
            })
            .collect();
        let mut total = 0.0;
        let mut logp = vec![0.0; m];
        let mut resp = resp;
        for i in 0..n {
            let row = x.row(i);
            for c in 0..m {
                if consts[c] == f64::NEG_INFINITY {
                    logp[c] = f64::NEG_INFINITY;
                    continue;
                }
                let q: f64 = row
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((xv, mu), v)| (xv - mu).powi(2) / v)
                    .sum();
                logp[c] = consts[c] - 0.5 * q;
            }
            let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logp.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse;
            if let Some(r) = resp.as_deref_mut() {
                for (c, l) in logp.iter().enumerate() {
                    r.set(i, c, (l - lse).exp());
                }
            }
        }
        total
    }

    /// Mean per-instance log-likelihood of `x`.
    pub fn mean_log_likelihood(&self, x: &Matrix) -> f64 {
        self.e_step(x, None) / x.rows() as f64
    }
}

/// EM fit; also returns the mean log-likelihood before each M-step.
pub fn gmm_fit_traced(x: &Matrix, components: usize, seed: u64) -> Result<(GmmModel, Vec<f64>)> {
    let (n, d) = x.shape();
    if components == 0 {
        return Err(Error::invalid("mixture needs at least one component"));
    }
    if n < components {
        return Err(Error::invalid(format!("{n} instances cannot fit {components} components")));
    }
    if d == 0 || !x.all_finite() {
        return Err(Error::invalid("instances must be finite and non-empty"));
    }
    let nf = n as f64;
    let global_mean: Vec<f64> = x.column_sums().iter().map(|s| s / nf).collect();
    let mut global_var = vec![0.0; d];
    for i in 0..n {
        for (f, v) in x.row(i).iter().enumerate() {
            global_var[f] += (v - global_mean[f]).powi(2) / nf;
        }
    }
    let global_var: Vec<f64> = global_var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
    let mut rng = seeded(seed);
    let picks = sample(&mut rng, n, components);
    let mut model = GmmModel {
        weights: vec![1.0 / components as f64; components],
        means: picks.iter().map(|i| x.row(i).to_vec()).collect(),
        variances: vec![global_var; components],
    };

    let mut resp = Matrix::zeros(n, components);
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let ll = model.e_step(x, Some(&mut resp)) / nf;
        if !ll.is_finite() {
            return Err(Error::numeric("mixture log-likelihood is not finite"));
        }
        let converged = history.last().is_some_and(|&prev: &f64| ll - prev < TOLERANCE);
        history.push(ll);
        if converged {
            break;
        }
        let nk = resp.column_sums();
        for c in 0..components {
            if nk[c] <= 0.0 {
                model.weights[c] = 0.0;
                continue;
            }
            model.weights[c] = nk[c] / nf;
            let mut mu = vec![0.0; d];
            for i in 0..n {
                let r = resp.get(i, c);
                for (m, v) in mu.iter_mut().zip(x.row(i)) {
                    *m += r * v;
                }
            }
            mu.iter_mut().for_each(|m| *m /= nk[c]);
            let mut var = vec![0.0; d];
            for i in 0..n {
                let r = resp.get(i, c);
                for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mu) {
                    *s += r * (v - m).powi(2);
                }
            }
            var.iter_mut().for_each(|s| *s = (*s / nk[c]).max(VARIANCE_FLOOR));
            model.means[c] = mu;
            model.variances[c] = var;
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok((model, history))
}

/// Diagonal-covariance EM until the mean log-likelihood gains less than
/// `1e-6` or 200 iterations.
pub fn gmm_fit(x: &Matrix, components: usize, seed: u64) -> Result<GmmModel> {
    Ok(gmm_fit_traced(x, components, seed)?.0)
}

/// `n` instances: component by weight, then an independent diagonal draw.
pub fn gmm_sample(model: &GmmModel, n: usize, seed: u64) -> Result<Matrix> {
    model.validate()?;
    let d = model.dim();
    let pick = WeightedIndex::new(&model.weights).map_err(|e| Error::invalid(e.to_string()))?;
    let stds: Vec<Vec<f64>> = model
        .variances
        .iter()
        .map(|v| v.iter().map(|x| x.sqrt()).collect())
        .collect();
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = pick.sample(&mut rng);
        for (mu, s) in model.means[c].iter().zip(&stds[c]) {
            let z: f64 = rng.sample(StandardNormal);
            data.push(mu + s * z);
        }
    }
    Ok(Matrix::from_raw(n, d, data))
}
