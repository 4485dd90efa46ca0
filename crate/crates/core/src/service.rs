//! One slot of MEC service and DC upload.
//!
//! Rates are frozen for the slot. Each associated GD has its earliest
//! pending task carried end to end within the slot. The AAV radio is half
//! duplex: DC collection only runs in the time left after its MEC uplinks
//! and result downlinks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::AssociationMatrix;
use crate::channel::{self, SatDirection, SPEED_OF_LIGHT};
use crate::codec::DecodedAction;
use crate::energy::{compute_energy, EnergyRow};
use crate::scenario::{ComputeParams, Scenario};
use crate::workload::MecTask;
use crate::world::{satellite_point, SlotState};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ServiceError {
    #[error("a link needed by the task has zero rate")]
    LinkDown,
}

/// Per-task delay components, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub up_g2a: f64,
    pub up_a2s: f64,
    pub comp: f64,
    pub down_s2a: f64,
    pub down_a2g: f64,
    pub prop: f64,
}

impl DelayBreakdown {
    pub fn total(&self) -> f64 {
        self.up_g2a + self.up_a2s + self.comp + self.down_s2a + self.down_a2g + self.prop
    }

    /// Satellite-path components only.
    pub fn satellite_part(&self) -> f64 {
        self.up_a2s + self.down_s2a + self.prop
    }
}

/// Rates of the four links a task may use, bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRates {
    pub g2a: f64,
    pub a2g: f64,
    pub a2s: f64,
    pub s2a: f64,
}

/// End-to-end delay of `task` served by an AAV at `sat_distance` meters
/// from the satellite.
pub fn task_delay(
    task: &MecTask,
    offload: bool,
    rates: &LinkRates,
    sat_distance: f64,
    compute: &ComputeParams,
) -> Result<DelayBreakdown, ServiceError> {
    let positive = |r: f64| if r > 0.0 && r.is_finite() { Ok(r) } else { Err(ServiceError::LinkDown) };
    let l = task.size_bits;
    let result = task.result_ratio * l;
    let up_g2a = l / positive(rates.g2a)?;
    let down_a2g = result / positive(rates.a2g)?;
    if !offload {
        return Ok(DelayBreakdown {
            up_g2a,
            comp: compute.cycles_per_bit * l / compute.freq_aav,
            down_a2g,
            ..DelayBreakdown::default()
        });
    }
    Ok(DelayBreakdown {
        up_g2a,
        up_a2s: l / positive(rates.a2s)?,
        comp: compute.cycles_per_bit * l / compute.freq_sat,
        down_s2a: result / positive(rates.s2a)?,
        down_a2g,
        prop: 2.0 * sat_distance / SPEED_OF_LIGHT,
    })
}

/// Service record of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub gd: usize,
    pub aav: usize,
    pub task_id: u64,
    pub size_bits: f64,
    pub result_ratio: f64,
    pub created_slot: u64,
    pub deadline_slot: u64,
    pub max_delay: f64,
    pub offload: bool,
    pub bandwidth: f64,
    pub rates: LinkRates,
    pub delay: DelayBreakdown,
    /// Finished within `max_delay`.
    pub success: bool,
}

impl TaskRecord {
    pub fn total_delay(&self) -> f64 {
        self.delay.total()
    }
}

/// Everything that happened during one slot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub tasks: Vec<TaskRecord>,
    /// GDs whose pending task waited because the uplink was below threshold or down.
    pub deferred_gds: Vec<usize>,
    /// Per AAV, seconds.
    pub busy_tx_time: Vec<f64>,
    /// Per AAV, seconds.
    pub dc_time: Vec<f64>,
    /// Per AAV, bits pulled off its GDs.
    pub collected_from_gds: Vec<f64>,
    /// Per AAV, bits delivered to the satellite.
    pub delivered: Vec<f64>,
    /// `D(t)`.
    pub satellite_received: f64,
    /// GD transmit seconds (MEC uplinks plus DC uploads).
    pub gd_tx_time: f64,
    /// Satellite downlink seconds.
    pub sat_tx_time: f64,
    /// Bits computed on the satellite.
    pub sat_compute_bits: f64,
    /// Per AAV, bits computed on board.
    pub local_bits: Vec<Vec<f64>>,
}

impl SlotOutcome {
    pub fn offloaded_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.offload).count()
    }

    /// Non-AAV energy components plus per-AAV compute, with movement left zero.
    pub fn energy_row(&self, scenario: &Scenario) -> EnergyRow {
        let c = &scenario.compute;
        let kappa_s = scenario.energy.sat_energy_per_cycle.unwrap_or(c.energy_per_cycle);
        EnergyRow {
            aavs: self
                .local_bits
                .iter()
                .map(|bits| crate::energy::slot_energy(0.0, bits, c.cycles_per_bit, c.energy_per_cycle))
                .collect(),
            gd_tx: scenario.radio.p_gd * self.gd_tx_time,
            sat_tx: scenario.radio.p_sat * self.sat_tx_time,
            sat_compute: compute_energy(self.sat_compute_bits, c.cycles_per_bit, kappa_s),
        }
    }
}

/// Linear gains `gains[v][g]` for the current positions.
pub fn gain_matrix(world: &SlotState, scenario: &Scenario) -> Vec<Vec<f64>> {
    let gds = scenario.gd_positions();
    (0..scenario.n_aavs)
        .map(|v| {
            let aav = world.aav_point(v, scenario);
            gds.iter()
                .map(|g| channel::link_budget(aav, g.at_altitude(0.0), &scenario.radio).map(|b| b.gain).unwrap_or(0.0))
                .collect()
        })
        .collect()
}

/// Plays one slot at the current AAV positions, mutating GD queues,
/// backlogs and AAV buffers.
pub fn run_slot(
    decisions: &DecodedAction,
    association: &AssociationMatrix,
    world: &mut SlotState,
    scenario: &Scenario,
) -> SlotOutcome {
    let radio = &scenario.radio;
    let n_aavs = scenario.n_aavs;
    let gains = gain_matrix(world, scenario);
    let field = channel::build_interference_field(&gains, association, radio);
    let sat = satellite_point(scenario);
    let mut out = SlotOutcome {
        busy_tx_time: vec![0.0; n_aavs],
        dc_time: vec![0.0; n_aavs],
        collected_from_gds: vec![0.0; n_aavs],
        delivered: vec![0.0; n_aavs],
        local_bits: vec![Vec::new(); n_aavs],
        ..SlotOutcome::default()
    };

    for (v, decision) in decisions.aavs.iter().enumerate() {
        let sat_distance = world.aav_point(v, scenario).distance(&sat);
        let a2s = channel::sat_link_rate(SatDirection::Up, sat_distance, n_aavs, world.rain_db, radio);
        let s2a = channel::sat_link_rate(SatDirection::Down, sat_distance, n_aavs, world.rain_db, radio);
        let mut g2a_rates = Vec::with_capacity(decision.gds.len());

        for gd_decision in &decision.gds {
            let g = gd_decision.gd;
            let gain = gains[v][g];
            let g2a = channel::g2a_rate(gd_decision.bandwidth, gain, field.at(v, g), radio).unwrap_or(0.0);
            let a2g = channel::a2g_rate(gd_decision.bandwidth, gain, radio).unwrap_or(0.0);
            g2a_rates.push((g, g2a));

            let Some(task) = world.gds[g].earliest().cloned() else { continue };
            let rates = LinkRates { g2a, a2g, a2s, s2a };
            let delay = match task_delay(&task, gd_decision.offload, &rates, sat_distance, &scenario.compute) {
                Ok(d) if g2a >= radio.rate_threshold => d,
                _ => {
                    out.deferred_gds.push(g);
                    continue;
                }
            };
            world.gds[g].take_earliest();
            let success = delay.total() <= task.max_delay;
            let counters = &mut world.gds[g].counters;
            if success {
                counters.completed += 1;
            } else {
                counters.failed += 1;
            }
            out.busy_tx_time[v] += delay.up_g2a + delay.down_a2g;
            out.gd_tx_time += delay.up_g2a;
            if gd_decision.offload {
                out.sat_tx_time += delay.down_s2a;
                out.sat_compute_bits += task.size_bits;
            } else {
                out.local_bits[v].push(task.size_bits);
            }
            out.tasks.push(TaskRecord {
                gd: g,
                aav: v,
                task_id: task.id,
                size_bits: task.size_bits,
                result_ratio: task.result_ratio,
                created_slot: task.created_slot,
                deadline_slot: task.deadline_slot,
                max_delay: task.max_delay,
                offload: gd_decision.offload,
                bandwidth: gd_decision.bandwidth,
                rates,
                delay,
                success,
            });
        }

        let dc_time = (scenario.slot_length - out.busy_tx_time[v]).max(0.0);
        out.dc_time[v] = dc_time;
        for (g, rate) in g2a_rates {
            let taken = world.gds[g].collect(dc_time * rate);
            if taken > 0.0 {
                out.gd_tx_time += taken / rate;
            }
            out.collected_from_gds[v] += taken;
        }
        world.aav_buffers[v] += out.collected_from_gds[v];
        let delivered = world.aav_buffers[v].min(dc_time * a2s);
        world.aav_buffers[v] -= delivered;
        out.delivered[v] = delivered;
        out.satellite_received += delivered;
    }
    out
}

/// Value reported for a ratio with an empty denominator.
pub const UNDEFINED: f64 = f64::NAN;

/// `(mec_rate, dc_rate)` in percent; each is `UNDEFINED` when its
/// denominator is zero.
pub fn completion_rates(completed: u64, generated: u64, delivered_bits: f64, generated_bits: f64) -> (f64, f64) {
    let mec = if generated == 0 { UNDEFINED } else { 100.0 * completed as f64 / generated as f64 };
    let dc = if generated_bits <= 0.0 { UNDEFINED } else { 100.0 * delivered_bits / generated_bits };
    (mec, dc)
}
