//! Synthetic scene-graph world.
//!
//! Scenes hold relationship instances whose class marginal is Zipf-skewed,
//! whose classes co-occur within contiguous cluster blocks, and whose
//! features share a scene-level confounder along one fixed direction.

mod bayes;
mod config;
mod dataset;
mod generate;
pub mod io;

pub(crate) use bayes::{argmax_lowest, log_sum_exp};
pub use bayes::{bayes_optimal_predict, BayesOracle};
pub use config::{ConfounderConfig, CountRange, SynthConfig};
pub use dataset::{cooccurrence_matrix, relation_histogram, Dataset, RelationshipInstance, Scene};
pub use generate::{generate_test_world, generate_world, WorldGeometry};
