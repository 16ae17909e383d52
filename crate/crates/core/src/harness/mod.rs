//! Experiment configuration, sweeps, rate fits, plots and the command line.

pub mod cli;
pub mod config;
pub mod ratefit;
pub mod svg;
pub mod sweep;
