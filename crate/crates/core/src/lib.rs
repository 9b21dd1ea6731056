//! Simulation engine and benchmark harness for adaptive experiments over
//! Bernoulli arms.
//!
//! Four assignment mechanisms (uniform random assignment, Thompson sampling,
//! Exploration sampling and Tempered Thompson sampling) are run wave by wave
//! against Beta-Bernoulli posteriors. Each completed experiment is scored on
//! five base loss measures and ten pairwise hybrids, and a study harness runs
//! the full (truth set × mechanism × wave size) grid with coordinate-keyed
//! seeding so that output is independent of thread count.
//!
//! Module map:
//!
//! - [`posterior`]: conjugate updates, moments, sampling, probability-of-best.
//! - [`special`]: regularized incomplete beta and Gauss-Legendre nodes.
//! - [`mechanism`]: per-wave assignment probabilities and wave allocation.
//! - [`loss`]: base and hybrid loss measures.
//! - [`harness`]: configs, seeding, single experiments and full studies.
//! - [`store`]: line-delimited run store and its linter.
//! - [`analysis`]: mean/CI tables and win matrices.
//! - [`validate`]: the oracle suite behind `adaptexp validate`.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod loss;
pub mod mechanism;
pub mod posterior;
pub mod special;
pub mod store;
pub mod validate;

pub use error::{Error, Result};

/// RNG used for every simulation stream. ChaCha output is stable across
/// platforms and crate versions, which the run-store reproducibility relies on.
pub type SimRng = rand_chacha::ChaCha8Rng;
