use serde::{Deserialize, Serialize};

use crate::geometry::{Point2, Point3};
use crate::scenario::Scenario;
use crate::workload::GdState;

/// Mutable world between slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    /// Next slot to be played, starting at 1.
    pub slot: u64,
    pub aav_positions: Vec<Point2>,
    pub gds: Vec<GdState>,
    /// Collected DC bits waiting on each AAV for the satellite uplink.
    pub aav_buffers: Vec<f64>,
    /// Satellite-link rain attenuation for this episode, dB.
    pub rain_db: f64,
}

impl SlotState {
    pub fn initial(scenario: &Scenario, rain_db: f64) -> Self {
        Self {
            slot: 1,
            aav_positions: scenario.initial_aav_positions.clone(),
            gds: vec![GdState::default(); scenario.n_gds],
            aav_buffers: vec![0.0; scenario.n_aavs],
            rain_db,
        }
    }

    pub fn aav_point(&self, aav: usize, scenario: &Scenario) -> Point3 {
        self.aav_positions[aav].at_altitude(scenario.aav_altitude)
    }
}

/// Ground position of the satellite raised to its altitude.
pub fn satellite_point(scenario: &Scenario) -> Point3 {
    scenario.sat_position.at_altitude(scenario.sat_altitude)
}

/// Totals of the per-GD counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldTotals {
    pub generated: u64,
    pub completed: u64,
    pub failed: u64,
    pub expired: u64,
    pub pending: u64,
    pub generated_bits: f64,
    pub collected_bits: f64,
    pub stored_bits: f64,
    pub buffered_bits: f64,
}

impl SlotState {
    pub fn totals(&self) -> WorldTotals {
        let mut t = WorldTotals::default();
        for gd in &self.gds {
            let c = &gd.counters;
            t.generated += c.generated;
            t.completed += c.completed;
            t.failed += c.failed;
            t.expired += c.expired;
            t.pending += gd.pending.len() as u64;
            t.generated_bits += c.generated_bits;
            t.collected_bits += c.collected_bits;
            t.stored_bits += gd.stored_bits;
        }
        t.buffered_bits = self.aav_buffers.iter().sum();
        t
    }
}
