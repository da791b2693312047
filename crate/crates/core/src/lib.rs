//! Adaptive target-image sampling and online student weight averaging for
//! unsupervised domain adaptation, on a toy two-headed segmentation model.
//!
//! The training loop alternates two steps once per epoch: the student is
//! trained on a fixed target sampling distribution, then the epoch snapshot is
//! folded into a running mean of weights and the mean model re-scores every
//! target image to shift sampling mass toward images on which its two heads
//! disagree.

pub mod aggregator;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pool;
pub mod rng;
pub mod sampler;
pub mod uncertainty;

pub use error::{Error, Result};
