//! Online diffusion-policy actor-critic.
//!
//! Each slot: draw candidate actions from the diffusion policy, act with the
//! one the critics rate highest, store the pair in the diffusion buffer and
//! the transition in the replay buffer, then (after warmup) take one critic
//! step, one actor step and a soft target update.

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sagin_core::env::{EnvError, Environment, EpisodeSummary, StepInfo};
use sagin_core::rng::{SeededRng, Stream, StreamRng};
use sagin_core::scenario::Scenario;

use crate::diffusion::{
    argmax_first, entropy_weights, q_weights, uniform_actions, DenoiseDraw, DiffusionError, DiffusionPolicy, LossGrad,
    EntropyWeighting, Squash, VarianceSchedule,
};
use crate::nn::{Activation, Adam, Checkpoint, Init, Mlp, NnError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite {what} loss at update {update}")]
    NonFiniteLoss { what: &'static str, update: u64 },
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Fixed-capacity FIFO store with uniform sampling.
#[derive(Debug, Clone)]
pub struct RingBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
    pushed: u64,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0, pushed: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    /// Stores `item`, evicting the oldest one when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    /// Items from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &T> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, index: usize) -> &T {
        &self.items[index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateActionPair {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

pub type ReplayBuffer = RingBuffer<Transition>;
pub type DiffusionBuffer = RingBuffer<StateActionPair>;

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = flat.len() / width.max(1);
    Array2::from_shape_vec((n, width), flat).expect("rows share a width")
}

fn concat_columns(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts match")
}

/// `y = r + gamma * min(q1, q2)`, or `r` on terminal transitions.
pub fn td_targets(rewards: &[f64], dones: &[bool], q1_next: &[f64], q2_next: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(q1_next.iter().zip(q2_next))
        .map(|((&r, &d), (&a, &b))| if d { r } else { r + gamma * a.min(b) })
        .collect()
}

/// Two critics with target copies.
#[derive(Debug, Clone)]
pub struct TwinCritics {
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
    opt: [Adam; 2],
}

impl TwinCritics {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let q1 = Mlp::new(&widths, Activation::Relu, Activation::Identity, Init::Uniform, rng);
        let q2 = Mlp::new(&widths, Activation::Relu, Activation::Identity, Init::Uniform, rng);
        Self::from_nets(q1, q2, lr)
    }

    pub fn from_nets(q1: Mlp, q2: Mlp, lr: f64) -> Self {
        let opt = [Adam::new(&q1, lr), Adam::new(&q2, lr)];
        Self { target: [q1.clone(), q2.clone()], online: [q1, q2], opt }
    }

    pub fn set_max_grad_norm(&mut self, cap: Option<f64>) {
        self.opt.iter_mut().for_each(|o| o.max_grad_norm = cap);
    }

    fn eval(net: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        let x = concat_columns(states, actions);
        Ok(net.forward(x.view())?.column(0).to_vec())
    }

    pub fn q(&self, which: usize, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        Self::eval(&self.online[which], states, actions)
    }

    /// `min(Q1, Q2)` of the online critics.
    pub fn min_q(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>, NnError> {
        let a = self.q(0, states, actions)?;
        let b = self.q(1, states, actions)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn target_pair(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        Ok((Self::eval(&self.target[0], states, actions)?, Self::eval(&self.target[1], states, actions)?))
    }

    /// Mean-squared-error step of both critics towards `targets`; returns the
    /// pre-step losses. Nothing changes when a loss or gradient is non-finite.
    pub fn update(
        &mut self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        targets: &[f64],
        update_index: u64,
    ) -> Result<[f64; 2], TrainError> {
        let mut staged = Vec::with_capacity(2);
        let mut losses = [0.0; 2];
        for k in 0..2 {
            let LossGrad { loss, grads } = critic_mse(&self.online[k], states, actions, targets)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { what: "critic", update: update_index });
            }
            if !grads.is_finite() {
                return Err(NnError::NonFiniteGradient.into());
            }
            losses[k] = loss;
            staged.push(grads);
        }
        for (k, g) in staged.iter().enumerate() {
            self.opt[k].step(&mut self.online[k], g)?;
        }
        Ok(losses)
    }

    pub fn soft_update(&mut self, rho: f64) -> Result<(), NnError> {
        for k in 0..2 {
            self.target[k].blend_from(&self.online[k], rho)?;
        }
        Ok(())
    }
}

/// `mean (Q(s, a) - y)^2` of one critic with its parameter gradient.
pub fn critic_mse(net: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>, targets: &[f64]) -> Result<LossGrad, NnError> {
    let x = concat_columns(states, actions);
    let b = targets.len() as f64;
    let tape = net.forward_tape(x.view())?;
    let residual: Vec<f64> = tape.output().column(0).iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / b;
    let dout = Array2::from_shape_fn((residual.len(), 1), |(i, _)| 2.0 * residual[i] / b);
    let (grads, _) = net.backward(&tape, &dout)?;
    Ok(LossGrad { loss, grads })
}

/// `target = rho * online + (1 - rho) * target`.
pub fn soft_update(online: &Mlp, target: &mut Mlp, rho: f64) -> Result<(), NnError> {
    target.blend_from(online, rho)
}

/// Noise schedule family; the step count comes from `denoise_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Linear { beta_start: f64, beta_end: f64 },
    Vp { beta_min: f64, beta_max: f64 },
}

impl Default for ScheduleSpec {
    /// Ends near an isotropic Gaussian (`alpha_bar_N ~ 0.006`) at any step count.
    fn default() -> Self {
        ScheduleSpec::Vp { beta_min: 0.1, beta_max: 10.0 }
    }
}

impl ScheduleSpec {
    pub fn build(&self, steps: usize) -> Result<VarianceSchedule, DiffusionError> {
        match *self {
            ScheduleSpec::Linear { beta_start, beta_end } => VarianceSchedule::linear(steps, beta_start, beta_end),
            ScheduleSpec::Vp { beta_min, beta_max } => VarianceSchedule::vp(steps, beta_min, beta_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Soft-update rate.
    pub tau: f64,
    pub entropy_coeff: f64,
    pub entropy_weighting: EntropyWeighting,
    /// Diffusion-buffer pairs per actor update.
    pub n_pi: usize,
    /// Uniform actions per actor update.
    pub n_u: usize,
    /// Policy samples per state for the value estimate.
    pub n_s: usize,
    /// Candidates for the acting policy.
    pub behavior_samples: usize,
    /// Candidates for the TD-target policy.
    pub target_samples: usize,
    /// Environment steps before updates start; actions are uniform until then.
    pub warmup_steps: usize,
    pub replay_capacity: usize,
    pub diffusion_capacity: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub denoise_steps: usize,
    pub schedule: ScheduleSpec,
    pub squash: Squash,
    /// Clip the sampler's `x_0` estimate at every reverse step.
    pub clip_denoised: bool,
    /// Critic updates per actor update.
    pub actor_update_every: usize,
    /// Gradient updates per environment step once warmup is over.
    pub updates_per_step: usize,
    /// Global gradient-norm cap for every optimizer; `None` disables.
    pub max_grad_norm: Option<f64>,
    /// Environments stepped in lockstep into the shared buffers.
    pub num_envs: usize,
    /// Episodes per checkpoint; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            batch_size: 256,
            gamma: 0.9,
            lr_actor: 3e-4,
            lr_critic: 3e-2,
            tau: 0.005,
            entropy_coeff: 0.02,
            entropy_weighting: EntropyWeighting::MeanSampled,
            n_pi: 64,
            n_u: 16,
            n_s: 8,
            behavior_samples: 4,
            target_samples: 2,
            warmup_steps: 1000,
            replay_capacity: 1_000_000,
            diffusion_capacity: 1_000_000,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 128],
            denoise_steps: 10,
            schedule: ScheduleSpec::default(),
            squash: Squash::Clamp,
            clip_denoised: false,
            actor_update_every: 1,
            updates_per_step: 1,
            max_grad_norm: None,
            num_envs: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Reduced network and batch sizes for a single desktop core.
    pub fn desk() -> Self {
        Self {
            episodes: 50,
            batch_size: 64,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            gamma: 0.95,
            n_pi: 64,
            n_u: 64,
            n_s: 4,
            behavior_samples: 16,
            // a strong entropy pull keeps the sampler off the box corners early on
            entropy_coeff: 5.0,
            entropy_weighting: EntropyWeighting::MaxWeight,
            warmup_steps: 300,
            replay_capacity: 100_000,
            diffusion_capacity: 100_000,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![128, 64],
            max_grad_norm: Some(10.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 || self.n_pi == 0 || self.n_s == 0 {
            return bad("batch_size, n_pi and n_s must be positive");
        }
        if self.behavior_samples == 0 || self.target_samples == 0 || self.num_envs == 0 || self.actor_update_every == 0 || self.updates_per_step == 0 {
            return bad("sample counts, num_envs and update cadences must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("tau and gamma must lie in [0, 1]");
        }
        if !(self.entropy_coeff >= 0.0) || !(self.lr_actor > 0.0) || !(self.lr_critic > 0.0) {
            return bad("learning rates must be positive and entropy_coeff non-negative");
        }
        if self.replay_capacity == 0 || self.diffusion_capacity == 0 {
            return bad("buffer capacities must be positive");
        }
        self.schedule.build(self.denoise_steps)?;
        Ok(())
    }
}

/// Losses of one actor update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActorLosses {
    pub vlb: f64,
    pub entropy: f64,
}

/// Actor, its target copy, critics and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: DiffusionPolicy,
    pub policy_target: DiffusionPolicy,
    pub critics: TwinCritics,
    actor_opt: Adam,
    pub config: TrainConfig,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, config: &TrainConfig, rng: &mut R) -> Result<Self, TrainError> {
        config.validate()?;
        let schedule = config.schedule.build(config.denoise_steps)?;
        let policy = DiffusionPolicy::new(state_dim, action_dim, &config.actor_hidden, schedule, config.squash, rng)
            .with_clip_denoised(config.clip_denoised);
        let mut critics = TwinCritics::new(state_dim, action_dim, &config.critic_hidden, config.lr_critic, rng);
        critics.set_max_grad_norm(config.max_grad_norm);
        let mut actor_opt = Adam::new(&policy.net, config.lr_actor);
        actor_opt.max_grad_norm = config.max_grad_norm;
        Ok(Self { policy_target: policy.clone(), policy, critics, actor_opt, config: config.clone() })
    }

    /// Behavior policy for a batch of states: `count` candidates each, the
    /// best under the online min-critic.
    pub fn select_actions<R: Rng + ?Sized>(&self, states: ArrayView2<f64>, count: usize, rng: &mut R) -> Result<Array2<f64>, TrainError> {
        pick_best(&self.policy, states, count, rng, |s, a| self.critics.min_q(s, a))
    }

    /// TD targets for a replay batch.
    pub fn targets<R: Rng + ?Sized>(&self, batch: &[&Transition], rng: &mut R) -> Result<Vec<f64>, TrainError> {
        let sd = self.policy.state_dim;
        let next = stack_rows(batch.iter().map(|t| t.next_state.as_slice()), sd);
        let next_actions = pick_best(&self.policy_target, next.view(), self.config.target_samples, rng, |s, a| {
            let (q1, q2) = self.critics.target_pair(s, a)?;
            Ok(q1.iter().zip(&q2).map(|(x, y)| x.min(*y)).collect())
        })?;
        let (q1, q2) = self.critics.target_pair(next.view(), next_actions.view())?;
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        Ok(td_targets(&rewards, &dones, &q1, &q2, self.config.gamma))
    }

    pub fn critic_step<R: Rng + ?Sized>(&mut self, replay: &ReplayBuffer, update: u64, rng: &mut R) -> Result<[f64; 2], TrainError> {
        let idx = replay.sample_indices(self.config.batch_size, rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| replay.get(i)).collect();
        let y = self.targets(&batch, rng)?;
        let s = stack_rows(batch.iter().map(|t| t.state.as_slice()), self.policy.state_dim);
        let a = stack_rows(batch.iter().map(|t| t.action.as_slice()), self.policy.action_dim);
        self.critics.update(s.view(), a.view(), &y, update)
    }

    /// Q-weighted denoising step on diffusion-buffer pairs plus the entropy
    /// term on uniform actions.
    pub fn actor_step<R: Rng + ?Sized>(&mut self, buffer: &DiffusionBuffer, update: u64, rng: &mut R) -> Result<ActorLosses, TrainError> {
        let c = &self.config;
        let (sd, ad) = (self.policy.state_dim, self.policy.action_dim);
        let idx = buffer.sample_indices(c.n_pi, rng);
        let states = stack_rows(idx.iter().map(|&i| buffer.get(i).state.as_slice()), sd);
        let actions = stack_rows(idx.iter().map(|&i| buffer.get(i).action.as_slice()), ad);

        // value estimate from fresh policy samples
        let reps = states.rows().into_iter().flat_map(|r| std::iter::repeat_n(r, c.n_s)).flat_map(|r| r.to_vec()).collect::<Vec<_>>();
        let rep_states = Array2::from_shape_vec((c.n_pi * c.n_s, sd), reps).expect("repeated states");
        let sampled = self.policy.sample_batch(rep_states.view(), rng)?;
        let sampled_q = self.critics.min_q(rep_states.view(), sampled.view())?;
        let v: Vec<f64> = sampled_q.chunks(c.n_s).map(|q| q.iter().sum::<f64>() / c.n_s as f64).collect();
        let q = self.critics.min_q(states.view(), actions.view())?;
        let w = q_weights(&q, &v);

        let draw = DenoiseDraw::sample(c.n_pi, ad, self.policy.schedule.steps(), rng);
        let vlb = self.policy.vlb_loss(states.view(), actions.view(), &w, &draw)?;
        let mut grads = vlb.grads;
        let mut entropy = 0.0;
        if c.n_u > 0 && c.entropy_coeff > 0.0 {
            let ent_rows: Vec<usize> = (0..c.n_u).map(|k| k % c.n_pi).collect();
            let ent_states = stack_rows(ent_rows.iter().map(|&j| states.row(j).to_slice().expect("standard layout")), sd);
            let weights = match c.entropy_weighting {
                EntropyWeighting::MeanSampled => {
                    let per_state: Vec<Vec<f64>> = ent_rows
                        .iter()
                        .map(|&j| q_weights(&sampled_q[j * c.n_s..(j + 1) * c.n_s], &vec![v[j]; c.n_s]))
                        .collect();
                    entropy_weights(c.entropy_coeff, &per_state)
                }
                EntropyWeighting::MaxWeight => {
                    let w_max = w[argmax_first(&w)];
                    vec![c.entropy_coeff * w_max; c.n_u]
                }
            };
            let uniform = uniform_actions(c.n_u, ad, rng);
            let draw_u = DenoiseDraw::sample(c.n_u, ad, self.policy.schedule.steps(), rng);
            let ent = self.policy.entropy_loss(ent_states.view(), uniform.view(), &weights, &draw_u)?;
            entropy = ent.loss;
            grads.add_assign(&ent.grads);
        }
        if !(vlb.loss.is_finite() && entropy.is_finite()) {
            return Err(TrainError::NonFiniteLoss { what: "actor", update });
        }
        self.actor_opt.step(&mut self.policy.net, &grads)?;
        Ok(ActorLosses { vlb: vlb.loss, entropy })
    }

    pub fn soft_update(&mut self) -> Result<(), NnError> {
        self.critics.soft_update(self.config.tau)?;
        self.policy_target.net.blend_from(&self.policy.net, self.config.tau)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        c.insert("actor", &self.policy.net);
        c.insert("actor_target", &self.policy_target.net);
        c.insert("critic1", &self.critics.online[0]);
        c.insert("critic2", &self.critics.online[1]);
        c.insert("critic1_target", &self.critics.target[0]);
        c.insert("critic2_target", &self.critics.target[1]);
        c
    }

    /// Agent with the networks of `checkpoint`; optimizer moments start fresh.
    pub fn from_checkpoint(checkpoint: &Checkpoint, state_dim: usize, config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let schedule = config.schedule.build(config.denoise_steps)?;
        let policy = DiffusionPolicy::with_net(checkpoint.get("actor")?, state_dim, schedule.clone(), config.squash)
            .with_clip_denoised(config.clip_denoised);
        let policy_target = DiffusionPolicy::with_net(checkpoint.get("actor_target")?, state_dim, schedule, config.squash)
            .with_clip_denoised(config.clip_denoised);
        let mut critics = TwinCritics::from_nets(checkpoint.get("critic1")?, checkpoint.get("critic2")?, config.lr_critic);
        critics.target = [checkpoint.get("critic1_target")?, checkpoint.get("critic2_target")?];
        critics.set_max_grad_norm(config.max_grad_norm);
        let mut actor_opt = Adam::new(&policy.net, config.lr_actor);
        actor_opt.max_grad_norm = config.max_grad_norm;
        Ok(Self { policy, policy_target, critics, actor_opt, config: config.clone() })
    }
}

/// `count` candidates per state row; keeps the one `q_fn` rates highest.
fn pick_best<R, Q>(policy: &DiffusionPolicy, states: ArrayView2<f64>, count: usize, rng: &mut R, q_fn: Q) -> Result<Array2<f64>, TrainError>
where
    R: Rng + ?Sized,
    Q: Fn(ArrayView2<f64>, ArrayView2<f64>) -> Result<Vec<f64>, NnError>,
{
    let count = count.max(1);
    let (rows, sd) = states.dim();
    let rep: Vec<f64> = states.rows().into_iter().flat_map(|r| std::iter::repeat_n(r, count)).flat_map(|r| r.to_vec()).collect();
    let rep = Array2::from_shape_vec((rows * count, sd), rep).expect("repeated states");
    let cand = policy.sample_batch(rep.view(), rng)?;
    if count == 1 {
        return Ok(cand);
    }
    let q = q_fn(rep.view(), cand.view())?;
    let mut out = Array2::zeros((rows, policy.action_dim));
    for i in 0..rows {
        let best = argmax_first(&q[i * count..(i + 1) * count]);
        out.row_mut(i).assign(&cand.row(i * count + best));
    }
    Ok(out)
}

/// One row of the training report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub env: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: EpisodeSummary,
    pub critic_loss: f64,
    pub actor_vlb_loss: f64,
    pub actor_entropy_loss: f64,
    pub updates: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<EpisodeRow>,
    pub env_steps: u64,
    pub updates: u64,
}

impl TrainReport {
    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.summary.reward).collect()
    }
}

/// A failed run with everything recorded before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("training stopped: {error}")]
pub struct TrainFailure {
    pub error: TrainError,
    pub partial: TrainReport,
}

/// Episode seed for environment `env` of episode `episode`.
pub fn episode_seed(seed: u64, episode: usize, env: usize, num_envs: usize) -> u64 {
    SeededRng::new(seed).derive((episode * num_envs + env) as u64).seed()
}

/// Hooks called during training.
pub trait TrainObserver {
    /// After every environment step, before any update.
    fn on_step(&mut self, _episode: usize, _env: usize, _seed: u64, _info: &StepInfo) {}
    fn on_episode(&mut self, _row: &EpisodeRow) {}
    fn on_checkpoint(&mut self, _episode: usize, _checkpoint: &Checkpoint) {}
}

impl TrainObserver for () {}

/// Writes checkpoints into a directory.
pub struct CheckpointDir(pub PathBuf);

impl TrainObserver for CheckpointDir {
    fn on_checkpoint(&mut self, episode: usize, checkpoint: &Checkpoint) {
        let _ = std::fs::create_dir_all(&self.0);
        let _ = checkpoint.save(&self.0.join(format!("episode_{episode:05}.json")));
    }
}

pub struct Trainer {
    pub agent: Agent,
    pub replay: ReplayBuffer,
    pub diffusion: DiffusionBuffer,
    scenario: Arc<Scenario>,
    seed: u64,
    policy_rng: StreamRng,
    replay_rng: StreamRng,
    env_steps: u64,
    updates: u64,
}

impl Trainer {
    pub fn new(scenario: Arc<Scenario>, config: &TrainConfig, seed: u64) -> Result<Self, TrainError> {
        let streams = SeededRng::new(seed);
        let agent = Agent::new(scenario.state_dim(), scenario.action_dim(), config, &mut streams.stream(Stream::Init))?;
        Ok(Self {
            agent,
            replay: RingBuffer::new(config.replay_capacity),
            diffusion: RingBuffer::new(config.diffusion_capacity),
            scenario,
            seed,
            policy_rng: streams.stream(Stream::PolicyNoise),
            replay_rng: streams.stream(Stream::Replay),
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Runs `config.episodes` episodes of every lockstep environment.
    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<TrainReport, TrainFailure> {
        let mut report = TrainReport::default();
        let episodes = self.agent.config.episodes;
        for episode in 0..episodes {
            if let Err(error) = self.run_episode(episode, &mut report, observer) {
                report.env_steps = self.env_steps;
                report.updates = self.updates;
                return Err(TrainFailure { error, partial: report });
            }
            let every = self.agent.config.checkpoint_every;
            if every > 0 && (episode + 1) % every == 0 {
                observer.on_checkpoint(episode + 1, &self.agent.checkpoint());
            }
        }
        report.env_steps = self.env_steps;
        report.updates = self.updates;
        Ok(report)
    }

    fn run_episode(&mut self, episode: usize, report: &mut TrainReport, observer: &mut dyn TrainObserver) -> Result<(), TrainError> {
        let k = self.agent.config.num_envs;
        let seeds: Vec<u64> = (0..k).map(|e| episode_seed(self.seed, episode, e, k)).collect();
        let mut envs: Vec<Environment> = seeds.iter().map(|&s| Environment::new(Arc::clone(&self.scenario), s)).collect();
        let mut states: Vec<Vec<f64>> = envs.iter().map(Environment::state).collect();
        let mut critic_loss = (0.0, 0u64);
        let mut actor_loss = (ActorLosses::default(), 0u64);
        let sd = self.scenario.state_dim();

        while !envs[0].is_done() {
            let batch = stack_rows(states.iter().map(Vec::as_slice), sd);
            let actions = if (self.env_steps as usize) < self.agent.config.warmup_steps {
                uniform_actions(k, self.scenario.action_dim(), &mut self.policy_rng)
            } else {
                self.agent.select_actions(batch.view(), self.agent.config.behavior_samples, &mut self.policy_rng)?
            };
            for (e, env) in envs.iter_mut().enumerate() {
                let action = actions.row(e).to_vec();
                let step = env.step(&action)?;
                observer.on_step(episode, e, seeds[e], &step.info);
                self.diffusion.push(StateActionPair { state: states[e].clone(), action: action.clone() });
                self.replay.push(Transition {
                    state: std::mem::replace(&mut states[e], step.state.clone()),
                    action,
                    reward: step.reward,
                    next_state: step.state,
                    done: step.done,
                });
                self.env_steps += 1;
            }
            let ready = self.env_steps as usize >= self.agent.config.warmup_steps;
            for _ in 0..if ready { self.agent.config.updates_per_step } else { 0 } {
                self.updates += 1;
                let l = self.agent.critic_step(&self.replay, self.updates, &mut self.replay_rng)?;
                critic_loss.0 += 0.5 * (l[0] + l[1]);
                critic_loss.1 += 1;
                if self.updates.is_multiple_of(self.agent.config.actor_update_every as u64) {
                    let a = self.agent.actor_step(&self.diffusion, self.updates, &mut self.replay_rng)?;
                    actor_loss.0.vlb += a.vlb;
                    actor_loss.0.entropy += a.entropy;
                    actor_loss.1 += 1;
                }
                self.agent.soft_update()?;
            }
        }
        let mean = |sum: f64, n: u64| if n == 0 { f64::NAN } else { sum / n as f64 };
        for (e, env) in envs.iter().enumerate() {
            let row = EpisodeRow {
                episode,
                env: e,
                seed: seeds[e],
                summary: env.summary(),
                critic_loss: mean(critic_loss.0, critic_loss.1),
                actor_vlb_loss: mean(actor_loss.0.vlb, actor_loss.1),
                actor_entropy_loss: mean(actor_loss.0.entropy, actor_loss.1),
                updates: self.updates,
            };
            observer.on_episode(&row);
            report.rows.push(row);
        }
        Ok(())
    }
}

/// Trains from scratch on `scenario`.
pub fn train(scenario: Arc<Scenario>, config: &TrainConfig, seed: u64, observer: &mut dyn TrainObserver) -> Result<(Agent, TrainReport), TrainFailure> {
    let mut trainer = Trainer::new(scenario, config, seed).map_err(|error| TrainFailure { error, partial: TrainReport::default() })?;
    let report = trainer.run(observer)?;
    Ok((trainer.agent, report))
}
