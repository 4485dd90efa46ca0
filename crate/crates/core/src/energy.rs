//! Rotary-wing propulsion and on-board computation energy.
//!
//! Propulsion power at horizontal speed `V`:
//!
//! ```text
//! P(V) = P0 (1 + 3V²/U_tip²) + Pi (sqrt(1 + V⁴/(4 v0⁴)) - V²/(2 v0²))^½ + ½ d0 ρ s A V³
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    /// Blade profile power, W.
    pub rotor_profile_power: f64,
    /// Induced power in hover, W.
    pub induced_power: f64,
    /// Rotor blade tip speed, m/s.
    pub tip_speed: f64,
    /// Mean rotor induced velocity in hover, m/s.
    pub mean_rotor_velocity: f64,
    pub fuselage_drag_ratio: f64,
    /// kg/m³.
    pub air_density: f64,
    pub rotor_solidity: f64,
    /// m².
    pub rotor_disc_area: f64,
    /// J/cycle on the satellite; falls back to the AAV coefficient.
    pub sat_energy_per_cycle: Option<f64>,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            rotor_profile_power: 79.86,
            induced_power: 88.63,
            tip_speed: 120.0,
            mean_rotor_velocity: 4.03,
            fuselage_drag_ratio: 0.6,
            air_density: 1.225,
            rotor_solidity: 0.05,
            rotor_disc_area: 0.503,
            sat_energy_per_cycle: None,
        }
    }
}

impl EnergyParams {
    pub(crate) fn validate(&self) -> Result<(), &'static str> {
        let checks = [
            ("energy.rotor_profile_power", self.rotor_profile_power),
            ("energy.induced_power", self.induced_power),
            ("energy.tip_speed", self.tip_speed),
            ("energy.mean_rotor_velocity", self.mean_rotor_velocity),
            ("energy.fuselage_drag_ratio", self.fuselage_drag_ratio),
            ("energy.air_density", self.air_density),
            ("energy.rotor_solidity", self.rotor_solidity),
            ("energy.rotor_disc_area", self.rotor_disc_area),
            ("energy.sat_energy_per_cycle", self.sat_energy_per_cycle.unwrap_or(1.0)),
        ];
        match checks.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, _)) => Err(name),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EnergyError {
    #[error("speed {speed} m/s exceeds the limit {max} m/s")]
    InvalidAction { speed: f64, max: f64 },
}

/// Propulsion power in W at speed `v` (m/s).
pub fn rotor_power(v: f64, p: &EnergyParams) -> f64 {
    let v2 = v * v;
    let v0_2 = p.mean_rotor_velocity * p.mean_rotor_velocity;
    let blade = p.rotor_profile_power * (1.0 + 3.0 * v2 / (p.tip_speed * p.tip_speed));
    let induced_inner = (1.0 + v2 * v2 / (4.0 * v0_2 * v0_2)).sqrt() - v2 / (2.0 * v0_2);
    let induced = p.induced_power * induced_inner.max(0.0).sqrt();
    let parasite = 0.5 * p.fuselage_drag_ratio * p.air_density * p.rotor_solidity * p.rotor_disc_area * v2 * v;
    blade + induced + parasite
}

/// `P(speed) * move_time + P(0) * hover_time`.
pub fn propulsion_energy(
    speed: f64,
    move_time: f64,
    hover_time: f64,
    max_speed: f64,
    p: &EnergyParams,
) -> Result<f64, EnergyError> {
    // round-off tolerance for speeds computed as distance / time
    if speed > max_speed * (1.0 + 1e-9) {
        return Err(EnergyError::InvalidAction { speed, max: max_speed });
    }
    Ok(rotor_power(speed, p) * move_time + rotor_power(0.0, p) * hover_time)
}

/// Energy of one slot in which the AAV flies `distance` meters at
/// `max_speed` and hovers for the rest of the slot.
pub fn movement_energy(distance: f64, max_speed: f64, slot_length: f64, p: &EnergyParams) -> Result<f64, EnergyError> {
    if distance <= 0.0 {
        return propulsion_energy(0.0, 0.0, slot_length, max_speed, p);
    }
    let move_time = distance / max_speed;
    if move_time > slot_length * (1.0 + 1e-9) {
        return Err(EnergyError::InvalidAction { speed: distance / slot_length, max: max_speed });
    }
    let move_time = move_time.min(slot_length);
    propulsion_energy(max_speed, move_time, slot_length - move_time, max_speed, p)
}

/// `kappa * C * L`.
pub fn compute_energy(task_bits: f64, cycles_per_bit: f64, energy_per_cycle: f64) -> f64 {
    energy_per_cycle * cycles_per_bit * task_bits
}

/// Per-AAV energy of one slot: propulsion plus locally computed tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AavSlotEnergy {
    pub move_energy: f64,
    pub compute_energy: f64,
}

impl AavSlotEnergy {
    pub fn total(&self) -> f64 {
        self.move_energy + self.compute_energy
    }
}

/// `E_v(t)` from the propulsion energy and the bits computed on board.
pub fn slot_energy(move_energy: f64, local_bits: &[f64], cycles_per_bit: f64, energy_per_cycle: f64) -> AavSlotEnergy {
    AavSlotEnergy {
        move_energy,
        compute_energy: local_bits.iter().map(|&l| compute_energy(l, cycles_per_bit, energy_per_cycle)).sum(),
    }
}

/// Per-slot energy row including the non-AAV components.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub aavs: Vec<AavSlotEnergy>,
    pub gd_tx: f64,
    pub sat_tx: f64,
    pub sat_compute: f64,
}

impl EnergyRow {
    /// `sum_v E_v(t)`.
    pub fn aav_total(&self) -> f64 {
        self.aavs.iter().map(AavSlotEnergy::total).sum()
    }

    pub fn aav_move(&self) -> f64 {
        self.aavs.iter().map(|a| a.move_energy).sum()
    }

    pub fn aav_compute(&self) -> f64 {
        self.aavs.iter().map(|a| a.compute_energy).sum()
    }
}

/// Cumulative energy bookkeeping for one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub move_energy: Vec<f64>,
    pub compute_energy: Vec<f64>,
    pub gd_tx: f64,
    pub sat_tx: f64,
    pub sat_compute: f64,
    pub slots: usize,
}

impl EnergyLedger {
    pub fn new(n_aavs: usize) -> Self {
        Self { move_energy: vec![0.0; n_aavs], compute_energy: vec![0.0; n_aavs], ..Self::default() }
    }

    pub fn record(&mut self, row: &EnergyRow) {
        for (v, a) in row.aavs.iter().enumerate() {
            self.move_energy[v] += a.move_energy;
            self.compute_energy[v] += a.compute_energy;
        }
        self.gd_tx += row.gd_tx;
        self.sat_tx += row.sat_tx;
        self.sat_compute += row.sat_compute;
        self.slots += 1;
    }

    /// Cumulative `f3`.
    pub fn aav_total(&self) -> f64 {
        self.move_energy.iter().sum::<f64>() + self.compute_energy.iter().sum::<f64>()
    }
}
