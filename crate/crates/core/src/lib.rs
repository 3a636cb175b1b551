//! Metric learning for multichannel time-series trials.
//!
//! Trials are embedded into a low-dimensional Euclidean space by a small
//! differentiable network trained with triplet, ladder or product-ladder
//! losses over several independent labels (subject and task class). The
//! resulting embeddings are scored by lightweight classifiers under
//! within-subject, complete leave-one-subject-out and partial
//! leave-one-subject-out (calibrated) protocols.
//!
//! Module map:
//! - [`dataio`]: trials, labels, the on-disk container, preprocessing and a
//!   synthetic multi-subject generator.
//! - [`embedder`]: the embedding network, its exact gradients, AdamW,
//!   the 1cycle schedule and the training loop.
//! - [`losses`]: distances, similarity levels and the loss family.
//! - [`mining`]: balanced batch sampling and in-batch triplet enumeration.
//! - [`classify`]: logistic regression, 1-NN, confusion matrices and PCA.
//! - [`scenarios`]: evaluation protocols and few-shot curves.
//! - [`stats`]: Wilcoxon signed-rank and Holm–Bonferroni.

pub mod classify;
pub mod dataio;
pub mod embedder;
mod error;
pub mod losses;
pub mod mining;
pub mod rng;
pub mod scenarios;
pub mod stats;

pub use error::{Error, Result};
