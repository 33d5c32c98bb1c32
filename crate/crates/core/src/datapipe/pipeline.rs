use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{
    align_and_window, chronological_split, ctrl_clean, group_by_subject, load_raw_manifest, CtrlConfig,
    Dataset, MinMaxScaler, PcaModel, SEQ_LEN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub pca_dim: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Run loss-curve cleaning on every split.
    pub clean: bool,
    pub ctrl: CtrlConfig,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            pca_dim: 128,
            train_fraction: 0.7,
            validation_fraction: 0.1,
            clean: true,
            ctrl: CtrlConfig::default(),
            seed: 0,
        }
    }
}

/// Raw manifest to model-ready dataset: window, split per subject, min-max
/// and PCA fitted on train, then loss-curve cleaning.
pub fn preprocess(manifest: impl AsRef<Path>, config: &PreprocessConfig) -> Result<Dataset> {
    let (m, recordings) = load_raw_manifest(manifest)?;
    let mut seqs = Vec::new();
    for rec in &recordings {
        seqs.extend(align_and_window(rec, &m.channels, SEQ_LEN)?);
    }
    if seqs.is_empty() {
        return Err(Error::invalid("no recording covers a full 15-second window"));
    }
    let width = seqs[0].features();
    info!("{} sequences of width {width} from {} recordings", seqs.len(), recordings.len());

    let mut splits = chronological_split(
        group_by_subject(seqs),
        config.train_fraction,
        config.validation_fraction,
    )?;
    let scaler = MinMaxScaler::fit(&splits.train)?;
    for s in splits.splits_mut() {
        scaler.apply(s)?;
    }
    splits.provenance.push("min-max fitted on train, applied to all splits with clipping".into());

    let pca = PcaModel::fit(&splits.train, config.pca_dim)?;
    for s in splits.splits_mut() {
        pca.apply(s)?;
    }
    splits.provenance.push(format!(
        "pca {width} -> {} fitted on train (explained variance {:.4})",
        config.pca_dim, pca.explained_variance_ratio
    ));

    if config.clean {
        let classes = m.class_names.len();
        for (i, (name, s)) in ["train", "validation", "test"]
            .into_iter()
            .zip(splits.splits_mut())
            .enumerate()
        {
            let before = s.len();
            let out = ctrl_clean(s, classes, &config.ctrl, config.seed.wrapping_add(i as u64))?;
            *s = out.kept;
            info!("ctrl {name}: kept {} of {before}", s.len());
        }
        splits
            .provenance
            .push(format!("ctrl cleaning on every split, seed {}", config.seed));
    }

    Ok(Dataset {
        name: m.name,
        task: 0,
        class_names: m.class_names,
        healthy_class: m.healthy_class,
        splits,
    })
}
