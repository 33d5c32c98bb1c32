use rand::seq::index::sample;

use crate::error::{Error, Result};

use super::rng::seeded;

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn num_params(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    fn param_name(&self, index: usize) -> String;
    fn loss(&self) -> Result<f64>;
    fn gradient(&self) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Coordinates probed; every coordinate is checked when this exceeds the count.
    pub probes: usize,
    pub h: f64,
    pub seed: u64,
    /// Denominator floor of the relative error, so gradients that are zero
    /// up to round-off are judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            probes: 64,
            h: 1e-4,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub probed: usize,
}

/// Compares the analytic gradient with central differences on randomly
/// probed coordinates. The model is restored to its original parameters.
pub fn finite_diff_grad_check<D: Differentiable + ?Sized>(
    model: &mut D,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let n = model.num_params();
    let analytic = model.gradient()?;
    if analytic.len() != n {
        return Err(Error::dim(format!(
            "gradient has {} entries for {n} params",
            analytic.len()
        )));
    }
    let coords: Vec<usize> = if cfg.probes >= n {
        (0..n).collect()
    } else {
        let mut rng = seeded(cfg.seed);
        let mut c = sample(&mut rng, n, cfg.probes).into_vec();
        c.sort_unstable();
        c
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        probed: coords.len(),
    };
    for &i in &coords {
        let orig = model.param(i);
        model.set_param(i, orig + cfg.h);
        let plus = model.loss();
        model.set_param(i, orig - cfg.h);
        let minus = model.loss();
        model.set_param(i, orig);
        let (plus, minus) = (plus?, minus?);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss while probing {}",
                model.param_name(i)
            )));
        }
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if rel > report.max_relative_error || report.worst_parameter.is_empty() {
            report.max_relative_error = rel;
            report.worst_parameter = model.param_name(i);
        }
    }
    Ok(report)
}
