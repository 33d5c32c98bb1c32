use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, softmax_in_place, Matrix};

use super::weights::Linear;

/// Hidden widths of the per-task classifier head.
pub const CLASSIFIER_HIDDEN: [usize; 2] = [512, 128];

/// Feed-forward stack with ReLU between layers and softmax on top.
///
/// Used both as the per-task classifier `C_i` (`H → 512 → 128 → classes`)
/// and as the small probe network of the data-cleaning step.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("bad layer widths {dims:?}")));
        }
        Ok(Mlp {
            layers: dims.windows(2).map(|w| Linear::xavier(w[0], w[1], rng)).collect(),
        })
    }

    /// The task classifier for `hidden`-wide pooled embeddings.
    pub fn classifier<R: Rng + ?Sized>(hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        Mlp::new(&[hidden, CLASSIFIER_HIDDEN[0], CLASSIFIER_HIDDEN[1], classes], rng)
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    pub fn named_params(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("fc{i}.weight"), l.weight.data()));
            out.push((format!("fc{i}.bias"), &l.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias);
        }
        out
    }

    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "classifier expects width {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = l.forward(&h);
            inputs.push(h);
            if i < last {
                let mut a = z.clone();
                a.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Class probabilities, one row per input row.
    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        let mut p = self.logits(x)?;
        for i in 0..p.rows() {
            softmax_in_place(p.row_mut(i));
        }
        Ok(p)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, d_logits: &Matrix, grads: &mut Mlp) -> Matrix {
        let mut d = d_logits.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let g = &mut grads.layers[i];
            gemm(1.0, &cache.inputs[i], true, &d, false, 1.0, &mut g.weight);
            for (b, s) in g.bias.iter_mut().zip(d.column_sums()) {
                *b += s;
            }
            let mut dx = Matrix::zeros(d.rows(), l.input_dim());
            gemm(1.0, &d, false, &l.weight, true, 0.0, &mut dx);
            if i > 0 {
                for (v, z) in dx.data_mut().iter_mut().zip(cache.pre[i - 1].data()) {
                    if *z <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            d = dx;
        }
        d
    }
}

/// Mean softmax cross-entropy over rows.
///
/// Returns the mean loss, `dLoss/dLogits`, and each row's own loss.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix, Vec<f64>)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {bad} outside {c} classes")));
    }
    let mut grad = logits.clone();
    let mut per_row = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        per_row.push(lse - row[y]);
        softmax_in_place(row);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    let mean = per_row.iter().sum::<f64>() / n as f64;
    Ok((mean, grad, per_row))
}
