//! Experiment driver: baselines, episode runners, artifact writers and the
//! `sagin` command line.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod export;
pub mod runner;
