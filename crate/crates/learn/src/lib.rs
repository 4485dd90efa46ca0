//! Diffusion-policy reinforcement learning for the network simulator.

pub mod diffusion;
pub mod nn;
pub mod trainer;

pub use diffusion::{DiffusionPolicy, Squash, VarianceSchedule};
pub use trainer::{train, Agent, TrainConfig, TrainReport, Trainer};
