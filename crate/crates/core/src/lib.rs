//! Target-aware metric learning with prioritized anchor sampling.
//!
//! A classifier is trained on a large labeled source domain plus a handful of
//! labeled target-domain samples per class. Alongside the usual
//! classification loss, each training query is compared with one anchor per
//! class through a softmax over negative squared embedding distances; each
//! anchor is drawn from the small target pool with probability `p` and from
//! the source pool otherwise.
//!
//! Modules:
//!
//! * [`data`]: samples, class pools, source/target splits, dataset files
//! * [`embedding`]: feedforward embedding, classifier head, SGD, checkpoints
//! * [`metric`]: distance softmax, metric cross-entropy, combined loss
//! * [`sampler`]: prioritized and pooled anchor sampling
//! * [`train`]: Baseline, Metric, All-Train, Fine-Tuned and TMPS regimes
//! * [`eval`]: confusion matrices, per-class and macro F1
//! * [`synth`]: synthetic domain-shifted benchmark generator
//! * [`sweep`]: multi-seed sweeps over regimes and `p`, reports

pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod metric;
pub mod rng;
pub mod sampler;
pub mod report;
pub mod sweep;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Hex SHA-256 of `bytes`.
pub fn checksum(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
