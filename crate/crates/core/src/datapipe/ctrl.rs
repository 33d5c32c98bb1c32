use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{softmax_cross_entropy, Mlp};
use crate::error::{Error, Result};
use crate::numerics::rng::{seeded, substream};
use crate::numerics::{kmeans2, Adam, AdamState, Matrix};

use super::SensorSequence;

/// Probe network and schedule for loss-curve cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtrlConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for CtrlConfig {
    fn default() -> Self {
        CtrlConfig {
            hidden: 128,
            epochs: 30,
            lr: 0.005,
            batch: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanOutcome {
    pub kept: Vec<SensorSequence>,
    /// Indices into the input split.
    pub rejected: Vec<usize>,
    /// Set when cleaning was skipped and the input returned unchanged.
    pub warning: Option<String>,
}

/// Clusters per-sample loss curves into two groups and returns
/// `(retained, rejected)` indices; the group whose centroid has the lower
/// mean loss is retained. Indistinguishable curves retain everything and
/// return a warning.
pub fn split_by_loss_curves(
    curves: &[Vec<f64>],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Option<String>)> {
    let all: Vec<usize> = (0..curves.len()).collect();
    if curves.len() < 2 {
        return Ok((all, Vec::new(), Some("fewer than two samples; nothing cleaned".into())));
    }
    match kmeans2(curves, seed) {
        Ok(km) => {
            let mean = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len().max(1) as f64;
            let clean = if mean(&km.centroids[0]) <= mean(&km.centroids[1]) { 0 } else { 1 };
            Ok((km.members(clean), km.members(1 - clean), None))
        }
        Err(Error::Degenerate(msg)) => {
            Ok((all, Vec::new(), Some(format!("loss curves indistinguishable ({msg}); nothing cleaned"))))
        }
        Err(e) => Err(e),
    }
}

fn flatten(seqs: &[SensorSequence], idx: &[usize]) -> Matrix {
    let width = seqs[0].tokens.len();
    let mut data = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        data.extend_from_slice(seqs[i].tokens.data());
    }
    Matrix::from_raw(idx.len(), width, data)
}

/// Trains a probe on the split, recording every sample's loss after each
/// epoch, and drops the samples whose loss curves cluster with the higher
/// centroid.
pub fn ctrl_clean(
    split: &[SensorSequence],
    classes: usize,
    config: &CtrlConfig,
    seed: u64,
) -> Result<CleanOutcome> {
    if split.len() < 2 {
        let msg = "fewer than two samples; nothing cleaned".to_string();
        warn!("ctrl: {msg}");
        return Ok(CleanOutcome {
            kept: split.to_vec(),
            rejected: Vec::new(),
            warning: Some(msg),
        });
    }
    if config.epochs == 0 || config.batch == 0 || config.hidden == 0 {
        return Err(Error::invalid("probe needs positive epochs, batch and width"));
    }
    let width = split[0].tokens.len();
    if split.iter().any(|s| s.tokens.len() != width) {
        return Err(Error::dim("sequences differ in shape"));
    }
    let labels: Vec<usize> = split
        .iter()
        .enumerate()
        .map(|(i, s)| s.label.ok_or_else(|| Error::invalid(format!("sequence {i} has no label"))))
        .collect::<Result<_>>()?;

    let mut rng = seeded(seed);
    let mut probe = Mlp::new(&[width, config.hidden, classes], &mut rng)?;
    let adam = Adam::with_lr(config.lr);
    let mut state = AdamState::new(probe.params_mut().iter().map(|p| p.len()));
    let all: Vec<usize> = (0..split.len()).collect();
    let x_all = flatten(split, &all);
    let mut curves = vec![Vec::with_capacity(config.epochs); split.len()];
    let mut order = all.clone();
    let mut shuffle = substream(seed, 1);

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch) {
            let x = flatten(split, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = probe.forward_train(&x)?;
            let (_, d_logits, _) = softmax_cross_entropy(&logits, &y)?;
            let mut grads = probe.zeros_like();
            probe.backward(&cache, &d_logits, &mut grads);
            let g: Vec<Vec<f64>> = grads.params_mut().into_iter().map(|p| p.to_vec()).collect();
            adam.update(&mut probe.params_mut(), &g, &mut state)?;
        }
        let (_, _, per_row) = softmax_cross_entropy(&probe.logits(&x_all)?, &labels)?;
        if per_row.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("probe loss diverged"));
        }
        for (c, l) in curves.iter_mut().zip(per_row) {
            c.push(l);
        }
    }

    let (kept_idx, rejected, warning) = split_by_loss_curves(&curves, seed)?;
    if let Some(w) = &warning {
        warn!("ctrl: {w}");
    }
    Ok(CleanOutcome {
        kept: kept_idx.iter().map(|&i| split[i].clone()).collect(),
        rejected,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_regimes_separate() {
        let mut curves = Vec::new();
        for i in 0..20 {
            let high = i % 5 == 0;
            let base = if high { 2.0 } else { 0.1 };
            curves.push((0..10).map(|e| base + 0.01 * e as f64).collect());
        }
        let (kept, rejected, warning) = split_by_loss_curves(&curves, 3).unwrap();
        assert!(warning.is_none());
        assert_eq!(rejected, vec![0, 5, 10, 15]);
        assert_eq!(kept.len(), 16);
    }

    #[test]
    fn identical_curves_keep_everything() {
        let curves = vec![vec![0.0; 5]; 6];
        let (kept, rejected, warning) = split_by_loss_curves(&curves, 1).unwrap();
        assert_eq!(kept.len(), 6);
        assert!(rejected.is_empty());
        assert!(warning.is_some());
    }

    #[test]
    fn single_sample_returned_unchanged() {
        let s = SensorSequence::new(Matrix::zeros(15, 2), 0, Some(0));
        let out = ctrl_clean(&[s.clone()], 2, &CtrlConfig::default(), 0).unwrap();
        assert_eq!(out.kept, vec![s]);
        assert!(out.warning.is_some());
    }

    #[test]
    fn unlabeled_rejected() {
        let s = SensorSequence::new(Matrix::zeros(15, 2), 0, None);
        assert!(ctrl_clean(&[s.clone(), s], 2, &CtrlConfig::default(), 0).is_err());
    }
}
