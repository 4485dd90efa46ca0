//! Satellite-AAV edge computing and data collection simulator.

pub mod association;
pub mod channel;
pub mod codec;
pub mod energy;
pub mod env;
pub mod events;
pub mod geometry;
pub mod rng;
pub mod scenario;
pub mod service;
pub mod workload;
pub mod world;

pub use association::{gs_associate, AssociationMatrix};
pub use codec::{decode, ActionLayout, DecodedAction};
pub use env::{Environment, EpisodeSummary, OptimizationMode, RewardWeights, StepInfo, StepResult};
pub use geometry::{AreaBounds, Point2, Point3};
pub use rng::{SeededRng, Stream, StreamRng};
pub use scenario::{load_scenario, load_scenario_with, ConfigError, Scenario};
