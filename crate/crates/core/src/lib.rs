//! Loss-driven batch composition for long-tailed relationship classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`synth`]: synthetic scene-graph world (scenes, relationship instances,
//!   confounder, analytic Bayes classifier) and its JSONL serialization.
//! - [`queryset`]: per-class tail pools sampled without replacement.
//! - [`mis`]: sampling kernels (unique-pair sampling, greedy mutual
//!   information, uncertainty sampling) and the pair-information estimators.
//! - [`are`]: loss tracker, query distribution, sampling plan and batch
//!   assembly.
//! - [`classifier`]: linear softmax model, cross-entropy, gradients and the
//!   training loop.
//! - [`metrics`]: R@K / mR@K / MR@K and causal diagnostics.

pub mod are;
pub mod classifier;
pub mod error;
pub mod metrics;
pub mod mis;
pub mod queryset;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
