//! Dataset directory:
//!
//! ```text
//! manifest.toml              name, features, labels, split sizes, provenance
//! <split>.cmft               f32 [n, 15, D]
//! <split>.labels.cmft        u32 [n], UNLABELED for missing labels
//! <split>.subjects.cmft      u32 [n]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::blob::{encode_blob, load_tensor, save_tensor, Tensor};
use super::{SensorSequence, SplitDataset, SEQ_LEN};

/// Label code stored for sequences without a class.
pub const UNLABELED: u32 = u32::MAX;

const MANIFEST: &str = "manifest.toml";
const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub features: usize,
    pub seq_len: usize,
    pub task: u32,
    pub class_names: Vec<String>,
    pub healthy_class: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Transforms applied and where they were fitted.
    pub provenance: Vec<String>,
    pub fingerprint: String,
}

/// A named, labelled set of splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub task: u32,
    pub class_names: Vec<String>,
    pub healthy_class: usize,
    pub splits: SplitDataset,
}

impl Dataset {
    pub fn features(&self) -> usize {
        self.splits
            .splits()
            .iter()
            .find_map(|(_, s)| s.first().map(SensorSequence::features))
            .unwrap_or(0)
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// SHA-256 over the encoded split tensors, first 16 hex digits.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (_, seqs) in self.splits.splits() {
            let mut buf = Vec::new();
            for t in split_tensors(seqs, self.features())? {
                encode_blob(&t, &mut buf);
            }
            h.update(&buf);
        }
        Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

/// `[n, T, D]` tensor of the sequences' tokens.
pub fn sequences_to_tensor(seqs: &[SensorSequence]) -> Result<Tensor> {
    let (t, d) = seqs.first().map_or((SEQ_LEN, 0), |s| s.tokens.shape());
    let mut data = Vec::with_capacity(seqs.len() * t * d);
    for s in seqs {
        if s.tokens.shape() != (t, d) {
            return Err(Error::dim(format!(
                "sequence shape {:?} differs from {:?}",
                s.tokens.shape(),
                (t, d)
            )));
        }
        data.extend(s.tokens.data().iter().map(|&v| v as f32));
    }
    Tensor::f32(vec![seqs.len(), t, d], data)
}

/// Unlabelled sequences from a `[n, T, D]` tensor.
pub fn sequences_from_tensor(t: &Tensor) -> Result<Vec<SensorSequence>> {
    let [n, len, d] = t.dims[..] else {
        return Err(Error::dim(format!("sequence tensor must have rank 3, got {:?}", t.dims)));
    };
    let values = t.to_f64()?;
    if n > 0 && len != SEQ_LEN {
        return Err(Error::dim(format!("sequences must have {SEQ_LEN} tokens, got {len}")));
    }
    values
        .chunks_exact((len * d).max(1))
        .take(n)
        .map(|c| Ok(SensorSequence::new(Matrix::from_vec(len, d, c.to_vec())?, 0, None)))
        .collect()
}

fn split_tensors(seqs: &[SensorSequence], features: usize) -> Result<[Tensor; 3]> {
    let tokens = if seqs.is_empty() {
        Tensor::f32(vec![0, SEQ_LEN, features], Vec::new())?
    } else {
        sequences_to_tensor(seqs)?
    };
    let labels = seqs
        .iter()
        .map(|s| s.label.map_or(UNLABELED, |l| l as u32))
        .collect();
    let subjects = seqs.iter().map(|s| s.subject).collect();
    Ok([
        tokens,
        Tensor::u32(vec![seqs.len()], labels)?,
        Tensor::u32(vec![seqs.len()], subjects)?,
    ])
}

pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let features = ds.features();
    for (name, seqs) in ds.splits.splits() {
        let [tokens, labels, subjects] = split_tensors(seqs, features)?;
        save_tensor(dir.join(format!("{name}.cmft")), &tokens)?;
        save_tensor(dir.join(format!("{name}.labels.cmft")), &labels)?;
        save_tensor(dir.join(format!("{name}.subjects.cmft")), &subjects)?;
    }
    let manifest = DatasetManifest {
        name: ds.name.clone(),
        features,
        seq_len: SEQ_LEN,
        task: ds.task,
        class_names: ds.class_names.clone(),
        healthy_class: ds.healthy_class,
        train: ds.splits.train.len(),
        validation: ds.splits.validation.len(),
        test: ds.splits.test.len(),
        provenance: ds.splits.provenance.clone(),
        fingerprint: ds.fingerprint()?,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    super::blob::write_atomic(dir.join(MANIFEST), text.as_bytes())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    let mut splits = SplitDataset {
        provenance: m.provenance.clone(),
        ..SplitDataset::default()
    };
    for ((name, want), slot) in SPLITS
        .into_iter()
        .zip([m.train, m.validation, m.test])
        .zip(splits.splits_mut())
    {
        let tokens = load_tensor(dir.join(format!("{name}.cmft")))?;
        let labels = load_tensor(dir.join(format!("{name}.labels.cmft")))?;
        let subjects = load_tensor(dir.join(format!("{name}.subjects.cmft")))?;
        let mut seqs = sequences_from_tensor(&tokens)?;
        let (labels, subjects) = (labels.as_u32()?, subjects.as_u32()?);
        if seqs.len() != want || labels.len() != want || subjects.len() != want {
            return Err(Error::invalid(format!(
                "{name}: manifest lists {want} sequences, files hold {}/{}/{}",
                seqs.len(),
                labels.len(),
                subjects.len()
            )));
        }
        if tokens.dims[2] != m.features {
            return Err(Error::dim(format!("{name}: width {} but manifest says {}", tokens.dims[2], m.features)));
        }
        for ((s, &l), &subj) in seqs.iter_mut().zip(labels).zip(subjects) {
            if l != UNLABELED && l as usize >= m.class_names.len() {
                return Err(Error::invalid(format!("{name}: label {l} outside the class list")));
            }
            s.label = (l != UNLABELED).then_some(l as usize);
            s.subject = subj;
            s.task = m.task;
        }
        *slot = seqs;
    }
    Ok(Dataset {
        name: m.name,
        task: m.task,
        class_names: m.class_names,
        healthy_class: m.healthy_class,
        splits,
    })
}

/// Writes bare sequences as one `[n, 15, D]` blob.
pub fn save_sequences(path: impl AsRef<Path>, seqs: &[SensorSequence]) -> Result<()> {
    save_tensor(path, &sequences_to_tensor(seqs)?)
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<SensorSequence>> {
    sequences_from_tensor(&load_tensor(path)?)
}
