//! Hourly step-goal prediction from activity-tracker logs.
//!
//! The pipeline runs left to right: [`ingest`] parses minute logs and
//! storyline segments, [`bucketing`] maps both onto 24 hourly buckets,
//! [`features`] builds labelled per-cutoff-hour matrices, [`models`] holds the
//! solvers, and [`eval`] runs cross-validation, hourly sweeps and grid search.
//! [`synth`] generates seeded stand-in cohorts and [`cli`] wires it together.

pub mod bucketing;
pub mod ingest;
pub mod features;
pub mod linalg;
pub mod models;
pub mod eval;
pub mod synth;
pub mod cli;
