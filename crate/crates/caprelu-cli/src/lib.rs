//! Experiment harness for the capped-ReLU robustness library: configuration,
//! trained-model store, experiment pipelines, and report serialization.

pub mod config;
pub mod experiments;
pub mod plotdata;
pub mod report;
pub mod store;
