//! End-to-end orchestration.
//!
//! [`run`] executes ingest → segment → fingerprint → partition → train →
//! evaluate → report. Every stage but the report writes a
//! content-addressed cache directory, so an unchanged rerun skips straight
//! to the report. [`experiment`] holds the same stages as in-memory
//! functions.

pub mod cache;
pub mod experiment;
mod run;

pub use experiment::{Experiment, ExperimentOutcome, ModelSettings, Segmented, Variant};
pub use run::{
    read_report, recording_files, run, DetectorChoice, PipelineConfig, Report, RunSummary, Stage, StageRun,
    CACHE_ENV, LABELS_FILE, MASK_FILE,
};
