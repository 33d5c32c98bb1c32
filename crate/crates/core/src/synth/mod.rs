//! Synthetic data: a Gaussian-mixture healthy corpus for pre-training and
//! labelled disease tasks with controlled class separation.

mod gmm;
mod task;

pub use gmm::{gmm_fit, gmm_fit_traced, gmm_sample, GmmModel, VARIANCE_FLOOR};
pub use task::{
    healthy_corpus, make_synthetic_task, reference_healthy_model, sequences_from_instances,
    SyntheticTaskSpec, DEFAULT_COMPONENTS, DEFAULT_CORPUS_INSTANCES,
};
