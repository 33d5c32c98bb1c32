use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalKind {
    /// Fixed sine/cosine table; contributes no parameters.
    Sinusoidal,
    /// Trained `seq_len × hidden` table, frozen with the rest of `W0`.
    Learned,
}

impl PositionalKind {
    pub fn code(self) -> u32 {
        match self {
            PositionalKind::Sinusoidal => 0,
            PositionalKind::Learned => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(PositionalKind::Sinusoidal),
            1 => Some(PositionalKind::Learned),
            _ => None,
        }
    }
}

/// Encoder shape. Defaults are the BERT-tiny configuration: 2 layers,
/// hidden 128, 2 heads, FFN 512, 15 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub seq_len: usize,
    pub positional: PositionalKind,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 128,
            heads: 2,
            ffn: 512,
            seq_len: 15,
            positional: PositionalKind::Sinusoidal,
            layer_norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 || self.seq_len == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::invalid("layer-norm epsilon must be positive"));
        }
        Ok(())
    }

    /// Features per token; the encoder has no input projection.
    pub fn input_dim(&self) -> usize {
        self.hidden
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Parameters of `W0` without the reconstruction head.
    pub fn encoder_params(&self) -> usize {
        let h = self.hidden;
        let attn = 4 * (h * h + h);
        let ffn = h * self.ffn + self.ffn + self.ffn * h + h;
        let norms = 4 * h;
        let pos = match self.positional {
            PositionalKind::Learned => self.seq_len * h,
            PositionalKind::Sinusoidal => 0,
        };
        self.layers * (attn + ffn + norms) + pos
    }

    pub fn head_params(&self) -> usize {
        self.hidden * self.hidden + self.hidden
    }
}
