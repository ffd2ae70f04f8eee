//! Simulation harness and CLI plumbing on top of the core classifier:
//! exact Gaussian field simulation, excursion-volume statistics, scaling
//! experiments, and the flat-file experiment formats.

pub mod cli;
pub mod config;
pub mod excursion;
pub mod fieldsim;
pub mod output;
pub mod rng;
