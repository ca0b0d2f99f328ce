//! Walking fingerprints from wrist-worn accelerometry.
//!
//! The crate turns raw tri-axial 80 Hz recordings into per-second
//! grid-cell predictors (joint histograms of acceleration against its
//! lagged value), fits one-vs-rest classifiers per participant and scores
//! rank-k identification accuracy. Stages:
//!
//! * [`ingest`]: CSV parsing, wear masks, vector magnitude.
//! * [`segment`]: step detection, walking bouts, eligibility.
//! * [`fingerprint`]: 432-dimensional grid-cell predictors and images.
//! * [`partition`]: random and temporal train/test splits.
//! * [`classifier`]: screening, logistic/lasso one-vs-rest, imbalance handling.
//! * [`evaluation`]: subject scores and rank metrics.
//! * [`synth`]: deterministic synthetic gait corpora.
//! * [`pipeline`]: configuration and cached end-to-end orchestration.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results are
//! identical either way.

pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod ingest;
pub mod par;
pub mod partition;
pub mod pipeline;
pub mod seed;
pub mod segment;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
