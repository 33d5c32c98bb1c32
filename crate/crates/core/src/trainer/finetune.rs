use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;

use crate::datapipe::{chronological_prefix, stack_selected, Dataset, SensorSequence};
use crate::encoder::{pool_batch, pool_batch_backward, softmax_cross_entropy, EncoderWeights, GradScope};
use crate::error::{Error, Result};
use crate::numerics::rng::substream;
use crate::numerics::{argmax, Adam, AdamState, Matrix};
use crate::peft::{AdapterBundle, AdapterSpec};

use super::config::TrainConfig;
use super::metrics::{metrics_from_predictions, Metrics};
use super::strategy::FinetuneStrategy;

const EVAL_BATCH: usize = 256;

/// Cross-entropy of `bundle` on a stacked batch, with gradients in
/// [`AdapterBundle::trainable_mut`] order.
pub fn task_loss_and_grad(
    w0: &EncoderWeights,
    bundle: &AdapterBundle,
    x: &Matrix,
    labels: &[usize],
    scope: GradScope,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let enc = bundle.resolve(w0)?;
    let t = enc.config.seq_len;
    let (emb, cache) = enc.forward_train(x)?;
    let (logits, ccache) = bundle.classifier.forward_train(&pool_batch(&emb, t))?;
    let (loss, d_logits, _) = softmax_cross_entropy(&logits, labels)?;
    let mut cg = bundle.classifier.zeros_like();
    let d_pooled = bundle.classifier.backward(&ccache, &d_logits, &mut cg);
    let mut eg = enc.zeros_like();
    enc.backward(&cache, &pool_batch_backward(&d_pooled, t), &mut eg, scope)?;
    Ok((loss, bundle.chain_gradients(w0, &eg, &cg)?))
}

/// Class probabilities, one row per sequence.
pub fn predict_proba(w0: &EncoderWeights, bundle: &AdapterBundle, seqs: &[SensorSequence]) -> Result<Matrix> {
    let enc = bundle.resolve(w0)?;
    let mut out = Matrix::zeros(seqs.len(), bundle.classes());
    let idx: Vec<usize> = (0..seqs.len()).collect();
    let mut row = 0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = stack_selected(seqs, chunk);
        let emb = enc.forward_batch(&x)?;
        let p = bundle.classifier.probabilities(&pool_batch(&emb, enc.config.seq_len))?;
        for i in 0..p.rows() {
            out.row_mut(row).copy_from_slice(p.row(i));
            row += 1;
        }
    }
    Ok(out)
}

fn labels_of(seqs: &[SensorSequence], classes: usize) -> Result<Vec<usize>> {
    seqs.iter()
        .map(|s| match s.label {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(Error::invalid(format!("label {l} outside {classes} classes"))),
            None => Err(Error::invalid("sequence has no label")),
        })
        .collect()
}

/// Scores `bundle` on labelled `seqs`.
pub fn evaluate(
    w0: &EncoderWeights,
    bundle: &AdapterBundle,
    seqs: &[SensorSequence],
    healthy: usize,
) -> Result<Metrics> {
    if seqs.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let labels = labels_of(seqs, bundle.classes())?;
    let p = predict_proba(w0, bundle, seqs)?;
    let pred: Vec<usize> = (0..p.rows()).map(|i| argmax(p.row(i))).collect();
    metrics_from_predictions(&labels, &pred, bundle.classes(), healthy)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

pub fn log_text(rows: &[LogRow]) -> String {
    let mut s = String::from("epoch\tsplit\tloss\taccuracy\n");
    for r in rows {
        let acc = r.accuracy.map_or("-".to_string(), |a| format!("{a:.6}"));
        let _ = writeln!(s, "{}\t{}\t{:.6e}\t{acc}", r.epoch, r.split, r.loss);
    }
    s
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Best checkpoint, on the `f32` grid.
    pub bundle: AdapterBundle,
    pub best_epoch: usize,
    pub validation_accuracy: Option<f64>,
    pub test: Metrics,
    pub train_size: usize,
    pub log: Vec<LogRow>,
}

fn mean_ce(p: &Matrix, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -p.get(i, y).max(1e-300).ln())
        .sum::<f64>()
        / labels.len() as f64
}

/// Trains one task with `strategy`.
///
/// `W0` is only read. The checkpoint with the best validation accuracy is
/// kept (ties go to the lower validation loss, then the earlier epoch);
/// without a validation split the last epoch wins.
pub fn finetune(
    w0: &EncoderWeights,
    data: &Dataset,
    strategy: &dyn FinetuneStrategy,
    spec: &AdapterSpec,
    task: &str,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let classes = data.classes();
    if classes < 2 {
        return Err(Error::invalid("fine-tuning needs at least two classes"));
    }
    if data.healthy_class >= classes {
        return Err(Error::invalid("healthy class outside the class list"));
    }
    for (_, split) in data.splits.splits() {
        labels_of(split, classes)?;
    }
    let train = if config.fraction < 1.0 {
        chronological_prefix(&data.splits.train, config.fraction)?
    } else {
        data.splits.train.clone()
    };
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let y_train = labels_of(&train, classes)?;
    let val = &data.splits.validation;
    let y_val = labels_of(val, classes)?;

    let mut bundle = strategy.init(task, spec, w0, classes, config.seed)?;
    bundle.meta.class_names = data.class_names.clone();
    bundle.meta.healthy_class = data.healthy_class;
    bundle.meta.dataset_fingerprint = data.fingerprint()?;

    let adam = Adam::with_lr(config.lr);
    let fresh_state = |b: &mut AdapterBundle| AdamState::new(b.trainable_mut().iter().map(|p| p.len()));
    let mut state = fresh_state(&mut bundle);
    let mut rng = substream(config.seed, 2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let epochs = config.finetune_epochs;
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, AdapterBundle)> = None;

    for epoch in 1..=epochs {
        if strategy.before_epoch(&mut bundle, epoch, epochs)? {
            state = fresh_state(&mut bundle);
            debug!("{task}: trainable set changed before epoch {epoch}");
        }
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch) {
            let x = stack_selected(&train, chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let (loss, grads) = task_loss_and_grad(w0, &bundle, &x, &y, strategy.grad_scope())?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("{task}: training loss is {loss} at epoch {epoch}")));
            }
            adam.update(&mut bundle.trainable_mut(), &grads, &mut state)?;
            sum += loss * chunk.len() as f64;
        }
        log.push(LogRow {
            epoch,
            split: "train",
            loss: sum / train.len() as f64,
            accuracy: None,
        });
        if val.is_empty() {
            if epoch == epochs {
                best = Some((0.0, 0.0, epoch, bundle.clone()));
            }
            continue;
        }
        let p = predict_proba(w0, &bundle, val)?;
        let hits = (0..p.rows()).filter(|&i| argmax(p.row(i)) == y_val[i]).count();
        let acc = hits as f64 / val.len() as f64;
        let loss = mean_ce(&p, &y_val);
        log.push(LogRow {
            epoch,
            split: "validation",
            loss,
            accuracy: Some(acc),
        });
        let better = match &best {
            None => true,
            Some((a, l, _, _)) => acc > *a || (acc == *a && loss < *l),
        };
        if better {
            best = Some((acc, loss, epoch, bundle.clone()));
        }
    }

    let (acc, _, best_epoch, mut bundle) = best.expect("at least one epoch ran");
    bundle.round_to_f32();
    let test = if data.splits.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    } else {
        evaluate(w0, &bundle, &data.splits.test, data.healthy_class)?
    };
    info!(
        "{task} [{}]: best epoch {best_epoch}, test {}",
        strategy.name(),
        test.summary()
    );
    Ok(FinetuneOutcome {
        bundle,
        best_epoch,
        validation_accuracy: (!val.is_empty()).then_some(acc),
        test,
        train_size: train.len(),
        log,
    })
}
