use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{stack_selected, SensorSequence};
use crate::encoder::{EncoderConfig, EncoderWeights, GradScope};
use crate::error::{Error, Result};
use crate::numerics::rng::substream;
use crate::numerics::{gemm, Adam, AdamState, Matrix};

use super::config::{LossScope, TrainConfig};
use super::mask::mdm_mask;

/// One masked mini-batch: the corrupted input, the clean target and a 0/1
/// weight per entry selecting the loss positions.
#[derive(Debug, Clone)]
pub struct MdmBatch {
    pub input: Matrix,
    pub target: Matrix,
    pub weight: Matrix,
}

/// Masks `seqs[idx]` and stacks them.
pub fn mdm_batch<R: Rng + ?Sized>(
    seqs: &[SensorSequence],
    idx: &[usize],
    scope: LossScope,
    rng: &mut R,
) -> Result<MdmBatch> {
    let target = stack_selected(seqs, idx);
    let mut input = target.clone();
    let mut weight = match scope {
        LossScope::Masked => Matrix::zeros(target.rows(), target.cols()),
        LossScope::All => Matrix::from_fn(target.rows(), target.cols(), |_, _| 1.0),
    };
    let mut offset = 0;
    for &i in idx {
        let (masked, spec) = mdm_mask(&seqs[i], rng)?;
        for (w, f) in spec.positions() {
            input.set(offset + w, f, masked.tokens.get(w, f));
            weight.set(offset + w, f, 1.0);
        }
        offset += seqs[i].tokens.rows();
    }
    Ok(MdmBatch { input, target, weight })
}

/// Weighted squared error summed over the batch, with the entry count.
fn sq_error(pred: &Matrix, batch: &MdmBatch) -> (f64, f64) {
    let mut sse = 0.0;
    let mut n = 0.0;
    for ((p, y), w) in pred.data().iter().zip(batch.target.data()).zip(batch.weight.data()) {
        sse += w * (p - y) * (p - y);
        n += w;
    }
    (sse, n)
}

/// Mean reconstruction loss of `w` on `batch`.
pub fn mdm_loss(w: &EncoderWeights, batch: &MdmBatch) -> Result<f64> {
    let head = w.head.as_ref().ok_or_else(|| Error::state("encoder has no reconstruction head"))?;
    let pred = head.forward(&w.forward_batch(&batch.input)?);
    let (sse, n) = sq_error(&pred, batch);
    if n == 0.0 {
        return Err(Error::invalid("batch has no loss positions"));
    }
    Ok(sse / n)
}

/// Mean loss and its gradient for every encoder and head parameter.
pub fn mdm_loss_and_grad(w: &EncoderWeights, batch: &MdmBatch) -> Result<(f64, EncoderWeights)> {
    let head = w.head.as_ref().ok_or_else(|| Error::state("encoder has no reconstruction head"))?;
    let (emb, cache) = w.forward_train(&batch.input)?;
    let pred = head.forward(&emb);
    let (sse, n) = sq_error(&pred, batch);
    if n == 0.0 {
        return Err(Error::invalid("batch has no loss positions"));
    }
    let mut d_pred = pred;
    for ((d, y), m) in d_pred.data_mut().iter_mut().zip(batch.target.data()).zip(batch.weight.data()) {
        *d = 2.0 * m * (*d - y) / n;
    }
    let mut grads = w.zeros_like();
    let gh = grads.head.as_mut().expect("zeros_like keeps the head");
    gemm(1.0, &emb, true, &d_pred, false, 0.0, &mut gh.weight);
    gh.bias = d_pred.column_sums();
    let mut d_emb = Matrix::zeros(emb.rows(), emb.cols());
    gemm(1.0, &d_pred, false, &head.weight, true, 0.0, &mut d_emb);
    w.backward(&cache, &d_emb, &mut grads, GradScope::All)?;
    Ok((sse / n, grads))
}

/// Mean loss over `corpus` under one fixed masking drawn from `seed`,
/// without updating anything.
pub fn mdm_eval_loss(
    w: &EncoderWeights,
    corpus: &[SensorSequence],
    scope: LossScope,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    if corpus.is_empty() || batch == 0 {
        return Err(Error::invalid("evaluation needs a non-empty corpus and batch"));
    }
    let head = w.head.as_ref().ok_or_else(|| Error::state("encoder has no reconstruction head"))?;
    let mut rng = substream(seed, 0xe7a1);
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let (mut sse, mut n) = (0.0, 0.0);
    for chunk in idx.chunks(batch) {
        let b = mdm_batch(corpus, chunk, scope, &mut rng)?;
        let pred = head.forward(&w.forward_batch(&b.input)?);
        let (s, c) = sq_error(&pred, &b);
        sse += s;
        n += c;
    }
    Ok(sse / n)
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// `W0` with its reconstruction head.
    pub weights: EncoderWeights,
    /// Mean loss of each epoch run.
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

impl PretrainOutcome {
    /// `epoch\tloss` lines.
    pub fn loss_log(&self) -> String {
        self.losses
            .iter()
            .enumerate()
            .map(|(e, l)| format!("{}\tpretrain\t{l:.6e}\n", e + 1))
            .collect()
    }
}

/// Epoch-at-a-time masked-data-modeling trainer.
pub struct Pretrainer<'a> {
    config: TrainConfig,
    corpus: &'a [SensorSequence],
    weights: EncoderWeights,
    adam: Adam,
    state: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    losses: Vec<f64>,
}

impl<'a> Pretrainer<'a> {
    /// Xavier-initialised encoder with a reconstruction head.
    pub fn new(config: &TrainConfig, encoder: EncoderConfig, corpus: &'a [SensorSequence]) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        if corpus.is_empty() {
            return Err(Error::invalid("pre-training corpus is empty"));
        }
        if let Some(s) = corpus.iter().find(|s| s.tokens.shape() != (encoder.seq_len, encoder.input_dim())) {
            return Err(Error::dim(format!(
                "corpus sequence is {:?}, encoder expects {}×{}",
                s.tokens.shape(),
                encoder.seq_len,
                encoder.input_dim()
            )));
        }
        let mut weights = EncoderWeights::xavier(encoder, true, &mut substream(config.seed, 0))?;
        let state = AdamState::new(weights.params_mut().iter().map(|p| p.len()));
        Ok(Pretrainer {
            config: config.clone(),
            corpus,
            weights,
            adam: Adam::with_lr(config.lr),
            state,
            rng: substream(config.seed, 1),
            order: (0..corpus.len()).collect(),
            losses: Vec::new(),
        })
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }

    /// One pass over the corpus with fresh masks; returns the epoch's mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.losses.len() + 1;
        self.order.shuffle(&mut self.rng);
        let (mut sum, mut count) = (0.0, 0.0);
        for (bi, chunk) in self.order.chunks(self.config.batch).enumerate() {
            let batch = mdm_batch(self.corpus, chunk, self.config.loss_scope, &mut self.rng)?;
            let (loss, grads) = mdm_loss_and_grad(&self.weights, &batch)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "pre-training loss is {loss} at epoch {epoch}, batch {bi}"
                )));
            }
            let g: Vec<Vec<f64>> = grads.named_params().into_iter().map(|(_, p)| p.to_vec()).collect();
            self.adam.update(&mut self.weights.params_mut(), &g, &mut self.state)?;
            let n = batch.weight.data().iter().sum::<f64>();
            sum += loss * n;
            count += n;
        }
        let mean = sum / count;
        self.losses.push(mean);
        debug!("pretrain epoch {epoch} loss {mean:.6e}");
        Ok(mean)
    }

    /// Snaps the weights to the `f32` grid.
    pub fn finish(mut self, stopped_early: bool) -> Result<PretrainOutcome> {
        if !self.weights.all_finite() {
            return Err(Error::numeric("pre-trained weights contain non-finite values"));
        }
        info!(
            "pretrain finished after {} epochs, loss {:.6e}",
            self.losses.len(),
            self.losses.last().copied().unwrap_or(f64::NAN)
        );
        self.weights.round_to_f32();
        Ok(PretrainOutcome {
            weights: self.weights,
            losses: self.losses,
            stopped_early,
        })
    }
}

/// Masked-data-modeling pre-training from Xavier initialisation.
///
/// Runs until `pretrain_epochs` or the first epoch whose mean loss is below
/// `stop_loss`. Fresh masks are drawn every epoch.
pub fn pretrain(config: &TrainConfig, encoder: EncoderConfig, corpus: &[SensorSequence]) -> Result<PretrainOutcome> {
    let mut p = Pretrainer::new(config, encoder, corpus)?;
    for _ in 0..config.pretrain_epochs {
        if p.run_epoch()? < config.stop_loss {
            return p.finish(true);
        }
    }
    p.finish(false)
}
