//! Encoder-only transformer foundation model, its reconstruction head for
//! masked pre-training, and the per-task classifier.
//!
//! Shape: `L` post-norm blocks of multi-head self-attention and a GELU
//! feed-forward layer over 15 tokens. Tokens are the (PCA-reduced) sensor
//! features themselves, so there is no input embedding; a position table is
//! added before the first block.

mod checkpoint;
mod classifier;
mod config;
mod forward;
mod weights;

pub use checkpoint::{decode_weights, encode_weights, load_weights, save_weights};
pub(crate) use checkpoint::{decode_config, encode_config, weights_from_tensors, weights_to_tensors};
pub use classifier::{softmax_cross_entropy, Mlp, MlpCache, CLASSIFIER_HIDDEN};
pub use config::{EncoderConfig, PositionalKind};
pub use forward::{pool_batch, pool_batch_backward, ForwardCache, GradScope};
pub(crate) use forward::Projector;
pub use weights::{sinusoidal_table, EncoderLayer, EncoderWeights, LayerNorm, Linear, Projection, TargetId};

use crate::datapipe::SensorSequence;
use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, Matrix};
use crate::peft::AdapterBundle;

/// Token embeddings (`seq_len × hidden`) for one sequence.
///
/// With an adapter, every adapted projection uses its effective weight.
pub fn encoder_forward(
    weights: &EncoderWeights,
    adapter: Option<&AdapterBundle>,
    seq: &SensorSequence,
) -> Result<Matrix> {
    if seq.tokens.cols() != weights.config.input_dim() {
        return Err(Error::dim(format!(
            "sequence has {} features, encoder expects {}",
            seq.tokens.cols(),
            weights.config.input_dim()
        )));
    }
    match adapter {
        None => weights.forward_batch(&seq.tokens),
        Some(bundle) => bundle.resolve(weights)?.forward_batch(&seq.tokens),
    }
}

/// Mean of the token embeddings.
pub fn pool(embeddings: &Matrix) -> Vec<f64> {
    pool_batch(embeddings, embeddings.rows()).into_data()
}

/// Per-token affine reconstruction through the pre-training head.
pub fn reconstruct(weights: &EncoderWeights, embeddings: &Matrix) -> Result<Matrix> {
    let head = weights
        .head
        .as_ref()
        .ok_or_else(|| Error::state("encoder has no reconstruction head"))?;
    if embeddings.cols() != head.input_dim() {
        return Err(Error::dim("embedding width does not match the head"));
    }
    Ok(head.forward(embeddings))
}

/// Class probabilities for one pooled embedding.
pub fn classify(pooled: &[f64], classifier: &Mlp) -> Result<Vec<f64>> {
    let x = Matrix::row_vector(pooled.to_vec());
    let mut logits = classifier.logits(&x)?.into_data();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// Encoder plus one classifier, the full per-task detection model.
pub fn detection_params(config: &EncoderConfig, classes: usize) -> usize {
    let h = config.hidden;
    let [a, b] = CLASSIFIER_HIDDEN;
    config.encoder_params() + h * a + a + a * b + b + b * classes + classes
}
