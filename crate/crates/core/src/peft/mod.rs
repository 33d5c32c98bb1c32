//! Low-rank adapter algebra: LoRA, DoRA and CoLA.
//!
//! Every adapted target stores a chain of `(B, A)` factor pairs, `B: d×r`
//! zero-initialised and `A: r×k` Gaussian-initialised. With scale `s = α/r`:
//!
//! * LoRA: `W = W0 + s·B·A` (one pair)
//! * DoRA: `V = W0 + s·B·A`, then column `j` of `V` rescaled to norm `m′[j]`
//! * CoLA: `W = W0 + s·Σ_j B_j·A_j` over the initialised stages; only the
//!   newest stage trains, earlier ones are frozen constants
//!
//! A bundle also carries the task's classifier, and, for the two
//! full-weight baselines, an encoder tensor set (`ΔW` or scratch weights).

mod bundle;
mod compose;

pub use bundle::{
    adapter_init, cola_advance_stage, effective_weight, AdapterBundle, AdapterSpec, BundleMeta,
    LowRank, Method, TargetAdapter, A_INIT_STD,
};
pub use compose::encoder_forward_composed;
