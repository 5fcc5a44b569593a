//! Command line and HTTP service for running experiments.

pub mod cli;
pub mod frames;
pub mod server;
