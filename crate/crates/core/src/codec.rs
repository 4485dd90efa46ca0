//! Flat continuous action <-> per-AAV movement, offload and bandwidth.
//!
//! Layout per AAV: `[distance, direction, offload x K, bandwidth x K]` with
//! `K = max_served`, all in `[-1, 1]`. An AAV serving `m <= K` GDs uses the
//! `m` largest offload raws and the `m` largest bandwidth raws; the chosen
//! slots, in slot order, map onto its GDs in ascending GD index.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::AssociationMatrix;
use crate::geometry::Point2;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("action has {got} components, expected {expected}")]
    CodecShape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub n_aavs: usize,
    pub max_served: usize,
}

impl ActionLayout {
    pub fn of(scenario: &Scenario) -> Self {
        Self { n_aavs: scenario.n_aavs, max_served: scenario.max_served }
    }

    pub fn per_aav(&self) -> usize {
        2 + 2 * self.max_served
    }

    pub fn dim(&self) -> usize {
        self.n_aavs * self.per_aav()
    }

    pub fn distance_index(&self, aav: usize) -> usize {
        aav * self.per_aav()
    }

    pub fn direction_index(&self, aav: usize) -> usize {
        aav * self.per_aav() + 1
    }

    pub fn offload_range(&self, aav: usize) -> std::ops::Range<usize> {
        let start = aav * self.per_aav() + 2;
        start..start + self.max_served
    }

    pub fn bandwidth_range(&self, aav: usize) -> std::ops::Range<usize> {
        let start = aav * self.per_aav() + 2 + self.max_served;
        start..start + self.max_served
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdDecision {
    pub gd: usize,
    pub offload: bool,
    /// Hz.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AavDecision {
    pub dx: f64,
    pub dy: f64,
    pub gds: Vec<GdDecision>,
}

impl AavDecision {
    pub fn distance(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedAction {
    pub aavs: Vec<AavDecision>,
}

/// Indices of the `m` largest values (ties to the lower index), ascending.
pub fn top_m_slots(values: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(m).collect();
    chosen.sort_unstable();
    chosen
}

/// Softmax proportions scaled to `total`.
pub fn softmax_shares(raws: &[f64], total: f64) -> Vec<f64> {
    let max = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raws.iter().map(|&r| (r - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| total * e / z).collect()
}

pub fn decode(raw: &[f64], association: &AssociationMatrix, scenario: &Scenario) -> Result<DecodedAction, CodecError> {
    let layout = ActionLayout::of(scenario);
    if raw.len() != layout.dim() {
        return Err(CodecError::CodecShape { expected: layout.dim(), got: raw.len() });
    }
    let clamped: Vec<f64> = raw.iter().map(|&r| if r.is_nan() { 0.0 } else { r.clamp(-1.0, 1.0) }).collect();
    let max_step = scenario.max_step();
    let aavs = (0..layout.n_aavs)
        .map(|v| {
            let distance = (clamped[layout.distance_index(v)] + 1.0) / 2.0 * max_step;
            let angle = clamped[layout.direction_index(v)] * PI;
            let served = association.served_by(v);
            let m = served.len().min(layout.max_served);
            let offload = &clamped[layout.offload_range(v)];
            let bandwidth = &clamped[layout.bandwidth_range(v)];
            let off_slots = top_m_slots(offload, m);
            let bw_slots = top_m_slots(bandwidth, m);
            let shares = softmax_shares(&bw_slots.iter().map(|&i| bandwidth[i]).collect::<Vec<_>>(), scenario.radio.bandwidth_aav);
            let gds = served
                .iter()
                .take(m)
                .enumerate()
                .map(|(k, &gd)| GdDecision { gd, offload: offload[off_slots[k]] >= 0.0, bandwidth: shares[k] })
                .collect();
            AavDecision { dx: distance * angle.cos(), dy: distance * angle.sin(), gds }
        })
        .collect();
    Ok(DecodedAction { aavs })
}

/// Raw `(distance, direction)` that decodes to the displacement `(dx, dy)`,
/// with the distance capped at `max_step`.
pub fn encode_movement(dx: f64, dy: f64, max_step: f64) -> (f64, f64) {
    let distance = dx.hypot(dy).min(max_step);
    let raw_distance = 2.0 * distance / max_step - 1.0;
    let raw_direction = if distance > 0.0 { dy.atan2(dx) / PI } else { 0.0 };
    (raw_distance.clamp(-1.0, 1.0), raw_direction.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltyEvents {
    /// AAVs that were clamped back into the area.
    pub boundary: Vec<usize>,
    /// AAV pairs closer than the safe distance after the move.
    pub collisions: Vec<(usize, usize)>,
}

impl PenaltyEvents {
    pub fn count(&self) -> usize {
        self.boundary.len() + self.collisions.len()
    }
}

/// Clamps to the area and reports boundary and separation violations.
/// Violating AAVs are not pushed apart.
pub fn clamp_and_penalize(positions: &[Point2], scenario: &Scenario) -> (Vec<Point2>, PenaltyEvents) {
    let mut events = PenaltyEvents::default();
    let clamped: Vec<Point2> = positions
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let c = scenario.area.clamp(p);
            if c != *p {
                events.boundary.push(v);
            }
            c
        })
        .collect();
    for a in 0..clamped.len() {
        for b in a + 1..clamped.len() {
            if clamped[a].distance(&clamped[b]) < scenario.safe_distance {
                events.collisions.push((a, b));
            }
        }
    }
    (clamped, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scenario(n_aavs: usize, n_gds: usize, max_served: usize) -> Scenario {
        let mut s = Scenario { n_aavs, n_gds, max_served, ..Scenario::default() };
        s.resolve().unwrap();
        s
    }

    fn one_aav(gds: usize) -> AssociationMatrix {
        AssociationMatrix::from_assignment(1, (0..gds).map(|_| Some(0)).collect())
    }

    #[test]
    fn equal_raws_split_evenly() {
        let s = scenario(1, 4, 4);
        let mut raw = vec![0.0; s.action_dim()];
        raw[6..10].fill(0.3);
        let d = decode(&raw, &one_aav(4), &s).unwrap();
        for g in &d.aavs[0].gds {
            assert!((g.bandwidth - 1.25e6).abs() < 1e-6);
        }
    }

    #[test]
    fn two_gd_softmax_shares() {
        let s = scenario(1, 2, 2);
        // [dist, dir, off0, off1, bw0, bw1]
        let raw = [0.0, 0.0, 0.5, -0.5, 1.0, 0.0];
        let d = decode(&raw, &one_aav(2), &s).unwrap();
        let e = std::f64::consts::E;
        let hi = 5e6 * e / (e + 1.0);
        assert!((d.aavs[0].gds[0].bandwidth - hi).abs() < 1.0);
        assert!((d.aavs[0].gds[0].bandwidth - 3_655_292.9).abs() < 1.0);
        assert!((d.aavs[0].gds[1].bandwidth - 1_344_707.1).abs() < 1.0);
        assert!(d.aavs[0].gds[0].offload && !d.aavs[0].gds[1].offload);
    }

    #[test]
    fn no_associated_gds() {
        let s = scenario(1, 3, 2);
        let raw = [1.0, 0.5, 0.9, 0.9, 0.9, 0.9];
        let d = decode(&raw, &AssociationMatrix::empty(1, 3), &s).unwrap();
        assert!(d.aavs[0].gds.is_empty());
        // full step, direction pi/2
        assert!(d.aavs[0].dx.abs() < 1e-9 && (d.aavs[0].dy - 50.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let s = scenario(1, 2, 2);
        assert_eq!(decode(&[0.0; 5], &one_aav(2), &s), Err(CodecError::CodecShape { expected: 6, got: 5 }));
    }

    #[test]
    fn top_m_uses_largest_in_slot_order() {
        assert_eq!(top_m_slots(&[0.1, 0.9, -0.4, 0.5], 2), vec![1, 3]);
        assert_eq!(top_m_slots(&[0.2, 0.2, 0.2], 2), vec![0, 1]);
        assert!(top_m_slots(&[0.2], 0).is_empty());
    }

    #[test]
    fn clamping_and_events() {
        let s = scenario(2, 1, 1);
        let fine = [Point2::new(0.0, 0.0), Point2::new(500.0, 0.0)];
        let (p, e) = clamp_and_penalize(&fine, &s);
        assert_eq!(p, fine.to_vec());
        assert_eq!(e.count(), 0);

        let (p, e) = clamp_and_penalize(&[Point2::new(1560.0, 0.0), Point2::new(0.0, 0.0)], &s);
        assert_eq!(p[0], Point2::new(1500.0, 0.0));
        assert_eq!(e.boundary, vec![0]);

        let (p, e) = clamp_and_penalize(&[Point2::new(0.0, 0.0), Point2::new(30.0, 0.0)], &s);
        assert_eq!(e.collisions, vec![(0, 1)]);
        assert_eq!(p[1], Point2::new(30.0, 0.0));
    }

    #[test]
    fn movement_round_trip() {
        let s = scenario(1, 1, 1);
        for (dx, dy) in [(30.0, 40.0), (-10.0, 0.0), (0.0, -50.0), (-20.0, -20.0)] {
            let (rd, ra) = encode_movement(dx, dy, s.max_step());
            let d = decode(&[rd, ra, 0.0, 0.0], &one_aav(1), &s).unwrap();
            assert!((d.aavs[0].dx - dx).abs() < 1e-9 && (d.aavs[0].dy - dy).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn shares_sum_and_shift_invariance(raws in prop::collection::vec(-1.0f64..1.0, 1..8), c in -0.5f64..0.5) {
            let shares = softmax_shares(&raws, 5e6);
            let total: f64 = shares.iter().sum();
            prop_assert!(((total - 5e6) / 5e6).abs() < 1e-9);
            prop_assert!(shares.iter().all(|&s| s > 0.0));
            let shifted: Vec<f64> = raws.iter().map(|r| r + c).collect();
            for (a, b) in shares.iter().zip(softmax_shares(&shifted, 5e6)) {
                prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
            }
        }

        #[test]
        fn decode_is_total_and_bounded(raw in prop::collection::vec(-3.0f64..3.0, 12), seed in 0u64..50) {
            let mut s = Scenario { n_aavs: 2, n_gds: 5, max_served: 2, seed, ..Scenario::default() };
            s.resolve().unwrap();
            let m = crate::association::gs_associate(&s.initial_aav_positions, s.gd_positions(), 2);
            let d = decode(&raw, &m, &s).unwrap();
            for (v, a) in d.aavs.iter().enumerate() {
                prop_assert!(a.distance() <= s.max_step() + 1e-9);
                if !a.gds.is_empty() {
                    let sum: f64 = a.gds.iter().map(|g| g.bandwidth).sum();
                    prop_assert!(((sum - 5e6) / 5e6).abs() < 1e-9);
                }
                prop_assert_eq!(a.gds.iter().map(|g| g.gd).collect::<Vec<_>>(), m.served_by(v));
            }
        }

        #[test]
        fn offload_permutation_consistent(perm_seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let s = scenario(1, 4, 4);
            let offloads = [0.7, -0.2, 0.1, -0.9];
            let mut perm = offloads;
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
            let mut raw = vec![0.0; s.action_dim()];
            raw[2..6].copy_from_slice(&perm);
            let d = decode(&raw, &one_aav(4), &s).unwrap();
            let flags: Vec<bool> = d.aavs[0].gds.iter().map(|g| g.offload).collect();
            prop_assert_eq!(flags, perm.iter().map(|&r| r >= 0.0).collect::<Vec<_>>());
        }
    }
}
