use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datapipe::{chronological_split, group_by_subject, Dataset, SensorSequence, SEQ_LEN};
use crate::error::{Error, Result};
use crate::numerics::rng::{seeded, substream};
use crate::numerics::Matrix;

use super::gmm::{gmm_sample, GmmModel};

/// Mixture components of the healthy corpus model.
pub const DEFAULT_COMPONENTS: usize = 8;
/// Instances drawn for the pre-training corpus.
pub const DEFAULT_CORPUS_INSTANCES: usize = 100_000;

/// A stand-in for a fitted healthy-population model when no real data is
/// available: `components` diagonal Gaussians in `dim` features with
/// random weights, means `N(0, 0.5²)` and variances in `[0.01, 0.05]`.
pub fn reference_healthy_model(dim: usize, components: usize, seed: u64) -> Result<GmmModel> {
    if dim == 0 || components == 0 {
        return Err(Error::invalid("mixture needs positive dimension and component count"));
    }
    let mut rng = seeded(seed);
    let raw: Vec<f64> = (0..components).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let means = (0..components)
        .map(|_| (0..dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let variances = (0..components)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.01..0.05)).collect())
        .collect();
    Ok(GmmModel {
        weights: raw.iter().map(|w| w / total).collect(),
        means,
        variances,
    })
}

/// Groups consecutive rows into 15-token sequences; leftover rows are dropped.
pub fn sequences_from_instances(x: &Matrix, subject: u32, label: Option<usize>) -> Vec<SensorSequence> {
    (0..x.rows() / SEQ_LEN)
        .map(|i| SensorSequence::new(x.slice_rows(i * SEQ_LEN, (i + 1) * SEQ_LEN), subject, label))
        .collect()
}

/// `instances` draws from `model` as unlabelled sequences (100,000 instances
/// give 6,666 sequences).
pub fn healthy_corpus(model: &GmmModel, instances: usize, seed: u64) -> Result<Vec<SensorSequence>> {
    Ok(sequences_from_instances(&gmm_sample(model, instances, seed)?, 0, None))
}

/// Recipe for a labelled synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub task: u32,
    pub class_names: Vec<String>,
    /// One mixture per class; class 0 is healthy.
    pub class_models: Vec<GmmModel>,
    pub per_class: usize,
    /// Each class's sequences are spread over this many subjects.
    pub subjects_per_class: usize,
    pub seed: u64,
    /// Documentation only.
    pub nominal_bayes_accuracy: f64,
}

impl SyntheticTaskSpec {
    /// Class 0 is `base`; class `c ≥ 1` is `base` shifted along its own
    /// random unit direction `u_c` (mutually orthogonal) by `sep` standard
    /// deviations of `base` along `u_c`. The closest pair of class means is
    /// therefore `sep` standard deviations apart.
    pub fn separated(
        task: u32,
        base: &GmmModel,
        classes: usize,
        sep: f64,
        per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        base.validate()?;
        let d = base.dim();
        if classes < 2 || classes - 1 > d {
            return Err(Error::invalid(format!("{classes} classes do not fit in {d} features")));
        }
        if per_class == 0 {
            return Err(Error::invalid("need at least one sequence per class"));
        }
        if !(sep >= 0.0 && sep.is_finite()) {
            return Err(Error::invalid("separation must be a non-negative number"));
        }
        let mut rng = substream(seed, 0xd1ec);
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        while dirs.len() < classes - 1 {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for u in &dirs {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-8 {
                dirs.push(v.into_iter().map(|a| a / n).collect());
            }
        }
        let mut class_models = vec![base.clone()];
        for u in &dirs {
            let shift = sep * base.variance_along(u).sqrt();
            let mut m = base.clone();
            for mu in &mut m.means {
                mu.iter_mut().zip(u).for_each(|(a, b)| *a += shift * b);
            }
            class_models.push(m);
        }
        // Union bound over the other classes on the mean of T independent
        // tokens, treating the projection as Gaussian.
        let z = sep * (SEQ_LEN as f64).sqrt() / 2.0;
        let tail = 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
        let nominal = (1.0 - (classes - 1) as f64 * tail).max(1.0 / classes as f64);
        let class_names = (0..classes)
            .map(|c| if c == 0 { "healthy".to_string() } else { format!("disease{c}") })
            .collect();
        Ok(SyntheticTaskSpec {
            task,
            class_names,
            class_models,
            per_class,
            subjects_per_class: 5.min(per_class),
            seed,
            nominal_bayes_accuracy: nominal,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_models.len()
    }
}

/// Samples every class, groups sequences by subject and splits 70/10/20
/// chronologically.
pub fn make_synthetic_task(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    if spec.classes() < 2 || spec.class_names.len() != spec.classes() {
        return Err(Error::invalid("task needs at least two named classes"));
    }
    if spec.per_class == 0 || spec.subjects_per_class == 0 {
        return Err(Error::invalid("need at least one sequence and subject per class"));
    }
    let mut seqs = Vec::with_capacity(spec.per_class * spec.classes());
    for (c, model) in spec.class_models.iter().enumerate() {
        let x = gmm_sample(model, spec.per_class * SEQ_LEN, spec.seed.wrapping_add(c as u64 * 7919))?;
        let subjects = spec.subjects_per_class.min(spec.per_class);
        for (i, mut s) in sequences_from_instances(&x, 0, Some(c)).into_iter().enumerate() {
            s.subject = (c * subjects + i % subjects) as u32;
            s.task = spec.task;
            seqs.push(s);
        }
    }
    let mut splits = chronological_split(group_by_subject(seqs), 0.7, 0.1)?;
    splits.provenance.push(format!(
        "synthetic task {} ({} classes, {} sequences each, seed {})",
        spec.task,
        spec.classes(),
        spec.per_class,
        spec.seed
    ));
    Ok(Dataset {
        name: format!("synthetic-task{}", spec.task),
        task: spec.task,
        class_names: spec.class_names.clone(),
        healthy_class: 0,
        splits,
    })
}
