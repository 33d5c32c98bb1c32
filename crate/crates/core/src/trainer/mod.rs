//! Masked-data-modeling pre-training, per-task fine-tuning and evaluation.
//!
//! Fine-tuning methods are [`FinetuneStrategy`] objects looked up by name in
//! a [`StrategyRegistry`]; they share one training loop.

mod config;
mod finetune;
mod mask;
mod metrics;
mod objective;
mod pretrain;
mod strategy;

pub use config::{LossScope, TrainConfig};
pub use finetune::{evaluate, finetune, log_text, predict_proba, task_loss_and_grad, FinetuneOutcome, LogRow};
pub use mask::{masked_per_window, mdm_mask, MaskSpec, MASKED_WINDOWS, MASK_RATE};
pub use metrics::{binary_f1, metrics_from_predictions, Metrics};
pub use objective::{MdmObjective, TaskObjective};
pub use pretrain::{
    mdm_batch, mdm_eval_loss, mdm_loss, mdm_loss_and_grad, pretrain, MdmBatch, PretrainOutcome, Pretrainer,
};
pub use strategy::{ColaStrategy, FinetuneStrategy, FullStrategy, LowRankStrategy, ScratchStrategy, StrategyRegistry};
