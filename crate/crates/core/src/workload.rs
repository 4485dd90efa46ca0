//! MEC task arrivals and DC data accrual per GD.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::scenario::WorkloadParams;

/// Bits per unit of the task-size Poisson draw.
pub const TASK_SIZE_UNIT: f64 = 1.0e5;
/// Bits per unit of the per-slot DC Poisson draw.
pub const DC_DATA_UNIT: f64 = 1.0e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MecTask {
    pub gd: usize,
    pub id: u64,
    pub size_bits: f64,
    /// Maximum tolerable E2E delay, seconds.
    pub max_delay: f64,
    /// Last slot in which processing may start.
    pub deadline_slot: u64,
    pub result_ratio: f64,
    pub created_slot: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GdCounters {
    pub generated: u64,
    /// Served and finished within the tolerable delay.
    pub completed: u64,
    /// Served but finished late.
    pub failed: u64,
    /// Dropped unserved after the deadline.
    pub expired: u64,
    pub generated_bits: f64,
    pub collected_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdState {
    pub pending: VecDeque<MecTask>,
    /// DC backlog, bits.
    pub stored_bits: f64,
    pub last_generation_slot: u64,
    pub counters: GdCounters,
    next_id: u64,
}

impl Default for GdState {
    fn default() -> Self {
        Self { pending: VecDeque::new(), stored_bits: 0.0, last_generation_slot: 0, counters: GdCounters::default(), next_id: 0 }
    }
}

/// `1 - exp(-delta_f * gap)`.
pub fn generation_probability(task_density: f64, gap_slots: u64) -> f64 {
    1.0 - (-task_density * gap_slots as f64).exp()
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive finite Poisson rate").sample(rng)
}

/// Task size in bits; a zero draw is raised to one unit so every task has data.
pub fn sample_task_size<R: Rng + ?Sized>(params: &WorkloadParams, rng: &mut R) -> f64 {
    poisson(params.mec_poisson_rate, rng).max(1.0) * TASK_SIZE_UNIT
}

fn uniform<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

impl GdState {
    /// Earliest pending task.
    pub fn earliest(&self) -> Option<&MecTask> {
        self.pending.front()
    }

    /// Bernoulli arrival with the inter-arrival probability; pushes and
    /// returns the new task on success.
    pub fn maybe_generate_task<R: Rng + ?Sized>(
        &mut self,
        gd: usize,
        slot: u64,
        params: &WorkloadParams,
        slot_length: f64,
        rng: &mut R,
    ) -> Option<MecTask> {
        let gap = slot.saturating_sub(self.last_generation_slot).max(1);
        let p = generation_probability(params.task_density, gap);
        if rng.random::<f64>() >= p {
            return None;
        }
        let size_bits = sample_task_size(params, rng);
        let deadline_s = uniform(params.deadline_range, rng);
        let max_delay = uniform(params.tolerance_range, rng);
        let result_ratio = uniform(params.result_ratio_range, rng);
        let task = MecTask {
            gd,
            id: self.next_id,
            size_bits,
            max_delay,
            deadline_slot: slot + (deadline_s / slot_length).floor() as u64,
            result_ratio,
            created_slot: slot,
        };
        self.next_id += 1;
        self.last_generation_slot = slot;
        self.counters.generated += 1;
        self.pending.push_back(task.clone());
        Some(task)
    }

    /// Adds this slot's DC data and returns the increment.
    pub fn accrue_dc_data<R: Rng + ?Sized>(&mut self, params: &WorkloadParams, rng: &mut R) -> f64 {
        let bits = poisson(params.dc_poisson_rate, rng) * DC_DATA_UNIT;
        self.stored_bits += bits;
        self.counters.generated_bits += bits;
        bits
    }

    /// Drops unserved tasks whose deadline slot is before `slot`.
    pub fn expire_overdue(&mut self, slot: u64) -> usize {
        let before = self.pending.len();
        self.pending.retain(|t| t.deadline_slot >= slot);
        let removed = before - self.pending.len();
        self.counters.expired += removed as u64;
        removed
    }

    /// Removes the earliest task for service.
    pub fn take_earliest(&mut self) -> Option<MecTask> {
        self.pending.pop_front()
    }

    /// Removes up to `bits` of DC backlog and returns the amount taken.
    pub fn collect(&mut self, bits: f64) -> f64 {
        let taken = bits.clamp(0.0, self.stored_bits);
        self.stored_bits -= taken;
        if self.stored_bits < 0.0 {
            self.stored_bits = 0.0;
        }
        self.counters.collected_bits += taken;
        taken
    }

    pub fn conserves_tasks(&self) -> bool {
        let c = &self.counters;
        c.generated == c.completed + c.failed + c.expired + self.pending.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn task(id: u64, deadline_slot: u64) -> MecTask {
        MecTask { gd: 0, id, size_bits: 1e5, max_delay: 1.0, deadline_slot, result_ratio: 0.2, created_slot: 0 }
    }

    #[test]
    fn arrival_probability() {
        assert!((generation_probability(0.1, 1) - 0.0952).abs() < 1e-4);
        assert!(generation_probability(1e6, 1) > 1.0 - 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = WorkloadParams { task_density: 1e9, ..WorkloadParams::default() };
        let mut gd = GdState::default();
        for slot in 1..=50 {
            assert!(gd.maybe_generate_task(0, slot, &p, 1.0, &mut rng).is_some());
        }
        assert_eq!(gd.counters.generated, 50);
    }

    #[test]
    fn task_size_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = WorkloadParams::default();
        let n = 100_000;
        let mean = (0..n).map(|_| sample_task_size(&p, &mut rng)).sum::<f64>() / n as f64;
        let se = 6f64.sqrt() * TASK_SIZE_UNIT / (n as f64).sqrt();
        assert!((mean - 6e5).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn dc_accrual_mean_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = WorkloadParams::default();
        let mut gd = GdState::default();
        let n = 100_000;
        let mut prev = 0.0;
        for _ in 0..n {
            gd.accrue_dc_data(&p, &mut rng);
            assert!(gd.stored_bits >= prev);
            prev = gd.stored_bits;
        }
        let mean = gd.stored_bits / n as f64;
        let se = 10f64.sqrt() * DC_DATA_UNIT / (n as f64).sqrt();
        assert!((mean - 1e5).abs() < 3.0 * se, "{mean}");
        let zero = WorkloadParams { dc_poisson_rate: 0.0, ..p };
        assert_eq!(gd.accrue_dc_data(&zero, &mut rng), 0.0);
    }

    #[test]
    fn expiry_rules() {
        let mut gd = GdState::default();
        assert_eq!(gd.expire_overdue(5), 0);
        gd.pending.extend([task(0, 3), task(1, 10), task(2, 4)]);
        gd.counters.generated = 3;
        // deadline == slot is kept
        assert_eq!(gd.expire_overdue(4), 1);
        assert_eq!(gd.pending.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(gd.expire_overdue(5), 1);
        assert_eq!(gd.pending.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1]);
        assert!(gd.conserves_tasks());
    }

    #[test]
    fn three_tasks_two_overdue() {
        let mut gd = GdState::default();
        gd.pending.extend([task(0, 2), task(1, 9), task(2, 1)]);
        assert_eq!(gd.expire_overdue(3), 2);
        assert_eq!(gd.pending.front().unwrap().id, 1);
    }

    #[test]
    fn generated_task_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = WorkloadParams { task_density: 50.0, ..WorkloadParams::default() };
        let mut gd = GdState::default();
        let t = gd.maybe_generate_task(3, 7, &p, 1.0, &mut rng).unwrap();
        assert_eq!((t.gd, t.created_slot), (3, 7));
        assert!(t.deadline_slot >= 17 && t.deadline_slot <= 37);
        assert!(t.max_delay >= 0.75 && t.max_delay <= 1.75);
        assert!(t.result_ratio > 0.0 && t.result_ratio < 1.0 && t.size_bits > 0.0);
        assert_eq!(gd.last_generation_slot, 7);
    }
}
