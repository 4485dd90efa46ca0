//! The MDP over the simulated network.
//!
//! A step plays one slot: GS association on the current positions, action
//! decoding, movement with clamping, service at the new positions, energy,
//! reward. Arrivals, DC accrual and expiry for the next slot run at the end
//! of the step so the returned state shows what the next action will face.

use std::sync::Arc;

use rand_distr::{Distribution, Weibull};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::gs_associate;
use crate::codec::{clamp_and_penalize, decode, CodecError, DecodedAction, PenaltyEvents};
use crate::energy::{movement_energy, EnergyError, EnergyLedger, EnergyRow};
use crate::geometry::Point2;
use crate::rng::{SeededRng, Stream, StreamRng};
use crate::scenario::{RainModel, Scenario};
use crate::service::{completion_rates, run_slot, SlotOutcome, UNDEFINED};
use crate::workload::DC_DATA_UNIT;
use crate::world::SlotState;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationMode {
    #[default]
    Joint,
    /// Drops the DC term.
    MecOnly,
    /// Drops the latency term.
    DcOnly,
}

impl std::str::FromStr for OptimizationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Self::Joint),
            "mec_only" => Ok(Self::MecOnly),
            "dc_only" => Ok(Self::DcOnly),
            other => Err(format!("unknown mode {other:?}; expected joint, mec_only or dc_only")),
        }
    }
}

impl std::fmt::Display for OptimizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Joint => "joint",
            Self::MecOnly => "mec_only",
            Self::DcOnly => "dc_only",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Per delivered bit.
    pub rho1: f64,
    /// Per joule.
    pub rho2: f64,
    pub penalty_per_event: f64,
    pub mode: OptimizationMode,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { rho1: 1e-5, rho2: 1e-3, penalty_per_event: 5.0, mode: OptimizationMode::Joint }
    }
}

impl RewardWeights {
    pub(crate) fn validate(&self) -> Result<(), &'static str> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.rho1) {
            Err("reward.rho1")
        } else if !ok(self.rho2) {
            Err("reward.rho2")
        } else if !ok(self.penalty_per_event) {
            Err("reward.penalty_per_event")
        } else {
            Ok(())
        }
    }
}

/// Raw slot quantities the reward is built from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardInputs {
    /// `sum (T_max - T)` over served tasks, seconds.
    pub slack: f64,
    /// `D(t)`, bits.
    pub delivered_bits: f64,
    /// `sum_v E_v(t)`, joules.
    pub aav_energy: f64,
    pub penalty_events: usize,
}

/// Weighted reward terms; `total` is their sum in field order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub latency: f64,
    pub data: f64,
    pub energy: f64,
    pub penalty: f64,
    pub total: f64,
}

pub fn reward_terms(inputs: &RewardInputs, w: &RewardWeights) -> RewardTerms {
    let latency = if w.mode == OptimizationMode::DcOnly { 0.0 } else { inputs.slack };
    let data = if w.mode == OptimizationMode::MecOnly { 0.0 } else { w.rho1 * inputs.delivered_bits };
    let energy = -w.rho2 * inputs.aav_energy;
    let penalty = -w.penalty_per_event * inputs.penalty_events as f64;
    RewardTerms { latency, data, energy, penalty, total: latency + data + energy + penalty }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Workload events applied at the start of a slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotArrivals {
    pub tasks_generated: u64,
    pub bits_generated: f64,
    pub tasks_expired: u64,
}

/// Everything observable about one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub slot: u64,
    /// Arrivals and expiry that opened this slot.
    pub arrivals: SlotArrivals,
    pub positions_before: Vec<Point2>,
    pub positions_after: Vec<Point2>,
    pub association: Vec<Option<usize>>,
    pub decisions: DecodedAction,
    pub penalties: PenaltyEvents,
    pub outcome: SlotOutcome,
    pub energy: EnergyRow,
    pub reward_inputs: RewardInputs,
    pub reward: RewardTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Episode metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub reward: f64,
    /// Mean E2E delay of served tasks, seconds; NaN when none were served.
    pub f1: f64,
    /// Bits delivered to the satellite.
    pub f2: f64,
    /// AAV energy, joules.
    pub f3: f64,
    pub mec_rate: f64,
    pub dc_rate: f64,
    /// Percent of served tasks sent to the satellite.
    pub offload_ratio: f64,
    pub tasks_generated: u64,
    pub tasks_completed: u64,
    pub tasks_failed: u64,
    pub tasks_expired: u64,
    pub penalty_events: u64,
    pub gd_tx_energy: f64,
    pub aav_move_energy: f64,
    pub aav_compute_energy: f64,
    pub sat_tx_energy: f64,
    pub sat_compute_energy: f64,
}

pub const SCALE_SLOTS: f64 = 50.0;

/// Scale divisor of the urgency block.
pub fn urgency_scale(scenario: &Scenario) -> f64 {
    let w = &scenario.workload;
    (w.deadline_range[1] / scenario.slot_length).floor().max(1.0) * w.tolerance_range[1]
}

/// Scale divisor of the stored-data block.
pub fn stored_scale(scenario: &Scenario) -> f64 {
    (SCALE_SLOTS * scenario.workload.dc_poisson_rate * DC_DATA_UNIT).max(DC_DATA_UNIT)
}

/// Draws the episode's rain attenuation.
pub fn sample_rain_db(scenario: &Scenario, rng: &mut StreamRng) -> f64 {
    match scenario.radio.rain_model {
        RainModel::Fixed => scenario.radio.rain_atten_db,
        RainModel::Weibull { shape, scale } => Weibull::new(scale, shape).expect("validated Weibull parameters").sample(rng),
    }
}

#[derive(Debug, Clone, Default)]
struct EpisodeTally {
    reward: f64,
    delay_sum: f64,
    served: u64,
    offloaded: u64,
    delivered: f64,
    penalty_events: u64,
}

pub struct Environment {
    scenario: Arc<Scenario>,
    world: SlotState,
    workload_rng: StreamRng,
    ledger: EnergyLedger,
    tally: EpisodeTally,
    pending_arrivals: SlotArrivals,
    slots_done: usize,
    seed: u64,
}

impl Environment {
    /// Environment reset with episode seed `seed`.
    pub fn new(scenario: Arc<Scenario>, seed: u64) -> Self {
        let mut env = Self {
            world: SlotState::initial(&scenario, 0.0),
            workload_rng: SeededRng::new(seed).stream(Stream::Workload),
            ledger: EnergyLedger::new(scenario.n_aavs),
            tally: EpisodeTally::default(),
            pending_arrivals: SlotArrivals::default(),
            slots_done: 0,
            seed,
            scenario,
        };
        env.reset(seed);
        env
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn world(&self) -> &SlotState {
        &self.world
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn state_dim(&self) -> usize {
        self.scenario.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.scenario.action_dim()
    }

    pub fn is_done(&self) -> bool {
        self.slots_done >= self.scenario.horizon
    }

    pub fn slots_done(&self) -> usize {
        self.slots_done
    }

    /// Seed of the current episode.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.seed = seed;
        let rng = SeededRng::new(seed);
        let rain = sample_rain_db(&self.scenario, &mut rng.stream(Stream::Channel));
        self.world = SlotState::initial(&self.scenario, rain);
        self.workload_rng = rng.stream(Stream::Workload);
        self.ledger = EnergyLedger::new(self.scenario.n_aavs);
        self.tally = EpisodeTally::default();
        self.slots_done = 0;
        self.pending_arrivals = self.open_slot();
        self.state()
    }

    /// Arrivals, DC accrual and expiry for `world.slot`.
    fn open_slot(&mut self) -> SlotArrivals {
        let slot = self.world.slot;
        let mut a = SlotArrivals::default();
        let s = &self.scenario;
        for (g, gd) in self.world.gds.iter_mut().enumerate() {
            if gd.maybe_generate_task(g, slot, &s.workload, s.slot_length, &mut self.workload_rng).is_some() {
                a.tasks_generated += 1;
            }
            a.bits_generated += gd.accrue_dc_data(&s.workload, &mut self.workload_rng);
            a.tasks_expired += gd.expire_overdue(slot) as u64;
        }
        a
    }

    /// Flat observation: AAV positions, GD positions, urgency, stored data,
    /// remaining time.
    pub fn state(&self) -> Vec<f64> {
        let s = &self.scenario;
        let mut out = Vec::with_capacity(s.state_dim());
        for p in &self.world.aav_positions {
            out.extend(s.area.normalize(p));
        }
        for p in s.gd_positions() {
            out.extend(s.area.normalize(p));
        }
        let u_scale = urgency_scale(s);
        for gd in &self.world.gds {
            let u = gd
                .earliest()
                .map(|t| t.deadline_slot.saturating_sub(self.world.slot) as f64 * t.max_delay / u_scale)
                .unwrap_or(0.0);
            out.push(u.min(1.0));
        }
        let d_scale = stored_scale(s);
        out.extend(self.world.gds.iter().map(|gd| gd.stored_bits / d_scale));
        out.push((s.horizon - self.slots_done.min(s.horizon)) as f64 / s.horizon as f64);
        out
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeFinished);
        }
        let s = Arc::clone(&self.scenario);
        let before = self.world.aav_positions.clone();
        let association = gs_associate(&before, s.gd_positions(), s.max_served);
        let decisions = decode(action, &association, &s)?;
        let targets: Vec<Point2> =
            before.iter().zip(&decisions.aavs).map(|(p, d)| p.offset(d.dx, d.dy)).collect();
        let (after, penalties) = clamp_and_penalize(&targets, &s);
        let mut move_energy = Vec::with_capacity(s.n_aavs);
        for (p, q) in before.iter().zip(&after) {
            let d = p.distance(q).min(s.max_step());
            move_energy.push(movement_energy(d, s.max_speed, s.slot_length, &s.energy)?);
        }
        self.world.aav_positions = after.clone();

        let outcome = run_slot(&decisions, &association, &mut self.world, &s);
        let mut energy = outcome.energy_row(&s);
        for (row, m) in energy.aavs.iter_mut().zip(move_energy) {
            row.move_energy = m;
        }
        self.ledger.record(&energy);

        let inputs = RewardInputs {
            slack: outcome.tasks.iter().map(|t| t.max_delay - t.total_delay()).sum(),
            delivered_bits: outcome.satellite_received,
            aav_energy: energy.aav_total(),
            penalty_events: penalties.count(),
        };
        let reward = reward_terms(&inputs, &s.reward);

        let t = &mut self.tally;
        t.reward += reward.total;
        t.delay_sum += outcome.tasks.iter().map(|r| r.total_delay()).sum::<f64>();
        t.served += outcome.tasks.len() as u64;
        t.offloaded += outcome.offloaded_count() as u64;
        t.delivered += outcome.satellite_received;
        t.penalty_events += penalties.count() as u64;

        let info = StepInfo {
            slot: self.world.slot,
            arrivals: self.pending_arrivals,
            positions_before: before,
            positions_after: after,
            association: association.assignment().to_vec(),
            decisions,
            penalties,
            outcome,
            energy,
            reward_inputs: inputs,
            reward,
        };

        self.slots_done += 1;
        self.world.slot += 1;
        let done = self.is_done();
        self.pending_arrivals = if done { SlotArrivals::default() } else { self.open_slot() };
        Ok(StepResult { state: self.state(), reward: reward.total, done, info })
    }

    pub fn summary(&self) -> EpisodeSummary {
        let totals = self.world.totals();
        let t = &self.tally;
        let (mec_rate, dc_rate) = completion_rates(totals.completed, totals.generated, t.delivered, totals.generated_bits);
        let l = &self.ledger;
        EpisodeSummary {
            reward: t.reward,
            f1: if t.served == 0 { UNDEFINED } else { t.delay_sum / t.served as f64 },
            f2: t.delivered,
            f3: l.aav_total(),
            mec_rate,
            dc_rate,
            offload_ratio: if t.served == 0 { 0.0 } else { 100.0 * t.offloaded as f64 / t.served as f64 },
            tasks_generated: totals.generated,
            tasks_completed: totals.completed,
            tasks_failed: totals.failed,
            tasks_expired: totals.expired,
            penalty_events: t.penalty_events,
            gd_tx_energy: l.gd_tx,
            aav_move_energy: l.move_energy.iter().sum(),
            aav_compute_energy: l.compute_energy.iter().sum(),
            sat_tx_energy: l.sat_tx,
            sat_compute_energy: l.sat_compute,
        }
    }
}
