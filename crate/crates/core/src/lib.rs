//! Health foundation model for wearable-sensor disease detection with
//! continual low-rank adaptation.
//!
//! A small encoder-only transformer is pre-trained by masked data modeling
//! on healthy sensor sequences, frozen, and then adapted per disease task
//! with LoRA, DoRA or CoLA. Each task's adapters and classifier live in an
//! [`library::AdapterLibrary`]; switching tasks never touches the shared
//! weights.

pub mod datapipe;
pub mod encoder;
pub mod error;
pub mod library;
pub mod numerics;
pub mod peft;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
