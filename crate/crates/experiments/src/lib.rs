//! Experiment harness: simulation pretraining, transfer runs on the
//! simulated clock, parameter sweeps and result reporting.

pub mod config;
pub mod ou;
pub mod pretrain;
pub mod report;
pub mod sweep;
pub mod transfer;
