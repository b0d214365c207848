//! Out-of-distribution detection around a small feedforward NetFlow classifier.
//!
//! The crate trains a fixed-architecture network (20 → 128 → 64 → 32 → 2 → |C|)
//! under four regimes (binary or multi-class, with or without Center-Loss), fits
//! six detectors on its softmax output and 2-D embedding space, combines them
//! into union ensembles, and scores unknown-attack traffic.
//!
//! Module map:
//!
//! - [`nn`]: forward pass, parameter and input gradients, Adam.
//! - [`training`]: stratified split, balanced sampling, Center-Loss, training loop.
//! - [`features`]: preprocessing and Random-Forest feature selection.
//! - [`detectors`]: CONF, MCD, ODIN, MD, SIM and KNN with threshold calibration.
//! - [`ensemble`]: any-OOD ensembles.
//! - [`data`]: CSV ingestion, scenarios, synthetic data, persistence.
//! - [`eval`]: TPR/FPR/F1 reports and embedding export.
//! - [`cli`]: configuration-driven batch commands.

pub mod cli;
pub mod data;
pub mod detectors;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
