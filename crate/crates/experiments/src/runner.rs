//! Episode loops for every algorithm, with their per-slot logs.

use std::sync::Arc;

use anyhow::Result;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use sagin_core::env::{Environment, EpisodeSummary, StepInfo};
use sagin_core::rng::{SeededRng, Stream, StreamRng};
use sagin_core::scenario::Scenario;
use sagin_learn::trainer::episode_seed;
use sagin_learn::Agent;

use crate::baselines::{GreedyPolicy, Policy, RandomPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Qagob,
    Random,
    Greedy,
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algo::Qagob => "qagob",
            Algo::Random => "random",
            Algo::Greedy => "greedy",
        })
    }
}

/// Acts with a trained agent's behavior rule: best of `samples`
/// diffusion draws under the online min-critic.
pub struct AgentPolicy<'a> {
    agent: &'a Agent,
    rng: StreamRng,
    samples: usize,
}

impl<'a> AgentPolicy<'a> {
    pub fn new(agent: &'a Agent, rng: StreamRng) -> Self {
        Self { agent, rng, samples: agent.config.behavior_samples }
    }
}

impl Policy for AgentPolicy<'_> {
    fn act(&mut self, env: &Environment) -> Result<Vec<f64>> {
        let state = env.state();
        let states = Array2::from_shape_vec((1, state.len()), state)?;
        Ok(self.agent.select_actions(states.view(), self.samples, &mut self.rng)?.row(0).to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub seed: u64,
    pub summary: EpisodeSummary,
    pub steps: Vec<StepInfo>,
}

/// Runs `policy` until the episode ends.
pub fn run_episode(env: &mut Environment, policy: &mut dyn Policy) -> Result<EpisodeLog> {
    let seed = env.seed();
    let mut steps = Vec::with_capacity(env.scenario().horizon);
    while !env.is_done() {
        let action = policy.act(env)?;
        steps.push(env.step(&action)?.info);
    }
    Ok(EpisodeLog { seed, summary: env.summary(), steps })
}

/// Seed of episode `episode` for run seed `seed`, shared by every
/// algorithm so that comparisons are paired.
pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    episode_seed(seed, episode, 0, 1)
}

/// `episodes` episodes of a non-learning policy. Each episode's policy
/// noise comes from that episode's own seed.
pub fn run_baseline(scenario: &Arc<Scenario>, algo: Algo, seed: u64, episodes: usize) -> Result<Vec<EpisodeLog>> {
    (0..episodes)
        .map(|ep| {
            let s = eval_episode_seed(seed, ep);
            let rng = SeededRng::new(s).stream(Stream::PolicyNoise);
            let mut env = Environment::new(Arc::clone(scenario), s);
            match algo {
                Algo::Random => run_episode(&mut env, &mut RandomPolicy::new(rng)),
                Algo::Greedy => run_episode(&mut env, &mut GreedyPolicy::new(rng)),
                Algo::Qagob => anyhow::bail!("qagob needs a trained agent"),
            }
        })
        .collect()
}

/// `episodes` episodes with a trained agent.
pub fn run_agent(scenario: &Arc<Scenario>, agent: &Agent, seed: u64, episodes: usize) -> Result<Vec<EpisodeLog>> {
    (0..episodes)
        .map(|ep| {
            let s = eval_episode_seed(seed, ep);
            let mut env = Environment::new(Arc::clone(scenario), s);
            run_episode(&mut env, &mut AgentPolicy::new(agent, SeededRng::new(s).stream(Stream::PolicyNoise)))
        })
        .collect()
}

pub fn run_baseline_random(scenario: &Arc<Scenario>, seed: u64) -> Result<EpisodeSummary> {
    Ok(run_baseline(scenario, Algo::Random, seed, 1)?.remove(0).summary)
}

pub fn run_baseline_greedy(scenario: &Arc<Scenario>, seed: u64) -> Result<EpisodeSummary> {
    Ok(run_baseline(scenario, Algo::Greedy, seed, 1)?.remove(0).summary)
}
