use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions covered by the pre-training reconstruction loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossScope {
    /// Only masked entries.
    #[default]
    Masked,
    /// Every entry of every token.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub pretrain_epochs: usize,
    /// Pre-training stops once an epoch's mean loss drops below this.
    pub stop_loss: f64,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Share of each subject's training sequences kept, earliest first.
    pub fraction: f64,
    pub loss_scope: LossScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            batch: 128,
            pretrain_epochs: 1000,
            stop_loss: 0.001,
            finetune_epochs: 300,
            seed: 0,
            fraction: 1.0,
            loss_scope: LossScope::Masked,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch == 0 || self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::invalid("batch size and epoch counts must be positive"));
        }
        if !(self.stop_loss.is_finite() && self.stop_loss > 0.0) {
            return Err(Error::invalid("stop loss must be positive"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::invalid(format!("data fraction {} is outside (0, 1]", self.fraction)));
        }
        Ok(())
    }
}
