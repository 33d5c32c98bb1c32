//! Sensor preprocessing: alignment and windowing, chronological splits,
//! min-max scaling, PCA, loss-curve data cleaning, and the on-disk dataset
//! format.

pub mod blob;
mod ctrl;
mod dataset;
mod normalize;
mod pca;
mod pipeline;
mod raw;
mod split;

pub use ctrl::{ctrl_clean, split_by_loss_curves, CleanOutcome, CtrlConfig};
pub use dataset::{
    load_dataset, load_sequences, save_dataset, save_sequences, sequences_from_tensor, sequences_to_tensor,
    Dataset, DatasetManifest, UNLABELED,
};
pub use normalize::MinMaxScaler;
pub use pca::PcaModel;
pub use pipeline::{preprocess, PreprocessConfig};
pub use raw::{
    align_and_window, load_raw_manifest, table1_channels, ChannelSpec, RawManifest, RawRecording, Stream,
};
pub use split::{chronological_prefix, chronological_split, group_by_subject, SplitDataset};

use crate::numerics::Matrix;

/// Tokens per sequence: fifteen one-second instances.
pub const SEQ_LEN: usize = 15;

/// One 15-second window, one row per second.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    pub tokens: Matrix,
    pub subject: u32,
    pub label: Option<usize>,
    pub task: u32,
}

impl SensorSequence {
    pub fn new(tokens: Matrix, subject: u32, label: Option<usize>) -> Self {
        SensorSequence {
            tokens,
            subject,
            label,
            task: 0,
        }
    }

    pub fn features(&self) -> usize {
        self.tokens.cols()
    }
}

/// Stacks sequences into one `(n·T) × D` matrix.
pub fn stack_tokens(seqs: &[SensorSequence]) -> crate::Result<Matrix> {
    let parts: Vec<Matrix> = seqs.iter().map(|s| s.tokens.clone()).collect();
    Matrix::vstack(&parts)
}

/// Stacks the sequences selected by `idx`.
pub fn stack_selected(seqs: &[SensorSequence], idx: &[usize]) -> Matrix {
    let cols = seqs.first().map_or(0, SensorSequence::features);
    let rows: usize = idx.iter().map(|&i| seqs[i].tokens.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for &i in idx {
        data.extend_from_slice(seqs[i].tokens.data());
    }
    Matrix::from_raw(rows, cols, data)
}
