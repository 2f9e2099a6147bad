//! Forecasting engine for daily price returns.
//!
//! The pipeline: simulate or load a dated price panel, schedule expanding
//! train/validation/test windows, fit a model zoo per window with grid-tuned
//! hyperparameters, combine forecasts, and evaluate out-of-sample — plus
//! attribution, changepoint detection, and mean-variance portfolio analysis.

pub mod breaks;
pub mod combine;
pub mod dataset;
pub mod econ;
pub mod evaluate;
pub mod interpret;
pub mod linalg;
pub mod linear;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod simgen;
pub mod stats;
pub mod tree;
