use crate::encoder::{pool_batch, EncoderWeights, GradScope};
use crate::error::Result;
use crate::numerics::{Differentiable, Matrix};
use crate::peft::AdapterBundle;

use super::finetune::task_loss_and_grad;
use super::pretrain::{mdm_loss, mdm_loss_and_grad, MdmBatch};

fn locate(lens: &[usize], mut i: usize) -> (usize, usize) {
    for (k, &n) in lens.iter().enumerate() {
        if i < n {
            return (k, i);
        }
        i -= n;
    }
    panic!("parameter index out of range")
}

/// Fine-tuning cross-entropy as a function of a bundle's trainable set,
/// for gradient checks. `W0` is a constant.
pub struct TaskObjective {
    pub w0: EncoderWeights,
    pub bundle: AdapterBundle,
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub scope: GradScope,
    lens: Vec<usize>,
}

impl TaskObjective {
    pub fn new(w0: EncoderWeights, bundle: AdapterBundle, x: Matrix, labels: Vec<usize>, scope: GradScope) -> Self {
        let lens = bundle.trainable_named().iter().map(|(_, p)| p.len()).collect();
        TaskObjective {
            w0,
            bundle,
            x,
            labels,
            scope,
            lens,
        }
    }

    /// Smallest `|z|` over the classifier's ReLU inputs. A central
    /// difference of step `h` is only meaningful while no `z` can cross
    /// zero, so checks should start from points where this is large.
    pub fn relu_margin(&self) -> Result<f64> {
        let enc = self.bundle.resolve(&self.w0)?;
        let mut h = pool_batch(&enc.forward_batch(&self.x)?, enc.config.seq_len);
        let layers = &self.bundle.classifier.layers;
        let mut margin = f64::INFINITY;
        for l in &layers[..layers.len() - 1] {
            h = l.forward(&h);
            margin = h.data().iter().fold(margin, |m, v| m.min(v.abs()));
            h.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(margin)
    }
}

impl Differentiable for TaskObjective {
    fn num_params(&self) -> usize {
        self.lens.iter().sum()
    }
    fn param(&self, i: usize) -> f64 {
        let (k, j) = locate(&self.lens, i);
        self.bundle.trainable_named()[k].1[j]
    }
    fn set_param(&mut self, i: usize, v: f64) {
        let (k, j) = locate(&self.lens, i);
        self.bundle.trainable_mut()[k][j] = v;
    }
    fn param_name(&self, i: usize) -> String {
        let (k, j) = locate(&self.lens, i);
        format!("{}[{j}]", self.bundle.trainable_named()[k].0)
    }
    fn loss(&self) -> Result<f64> {
        Ok(task_loss_and_grad(&self.w0, &self.bundle, &self.x, &self.labels, self.scope)?.0)
    }
    fn gradient(&self) -> Result<Vec<f64>> {
        Ok(task_loss_and_grad(&self.w0, &self.bundle, &self.x, &self.labels, self.scope)?
            .1
            .concat())
    }
}

/// Masked reconstruction loss as a function of every encoder and head
/// parameter.
pub struct MdmObjective {
    pub weights: EncoderWeights,
    pub batch: MdmBatch,
    lens: Vec<usize>,
}

impl MdmObjective {
    pub fn new(weights: EncoderWeights, batch: MdmBatch) -> Self {
        let lens = weights.named_params().iter().map(|(_, p)| p.len()).collect();
        MdmObjective { weights, batch, lens }
    }
}

impl Differentiable for MdmObjective {
    fn num_params(&self) -> usize {
        self.lens.iter().sum()
    }
    fn param(&self, i: usize) -> f64 {
        let (k, j) = locate(&self.lens, i);
        self.weights.named_params()[k].1[j]
    }
    fn set_param(&mut self, i: usize, v: f64) {
        let (k, j) = locate(&self.lens, i);
        self.weights.params_mut()[k][j] = v;
    }
    fn param_name(&self, i: usize) -> String {
        let (k, j) = locate(&self.lens, i);
        format!("{}[{j}]", self.weights.named_params()[k].0)
    }
    fn loss(&self) -> Result<f64> {
        mdm_loss(&self.weights, &self.batch)
    }
    fn gradient(&self) -> Result<Vec<f64>> {
        let (_, g) = mdm_loss_and_grad(&self.weights, &self.batch)?;
        Ok(g.named_params().into_iter().flat_map(|(_, p)| p.to_vec()).collect())
    }
}
