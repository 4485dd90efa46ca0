//! Distance-preference GD -> AAV matching with per-AAV capacity.
//!
//! Each unmatched GD (lowest index first) proposes to the nearest AAV still
//! on its candidate list. An AAV over capacity drops its farthest GD, which
//! strikes that AAV from its list and proposes again. The loop ends when no
//! unmatched GD has a candidate left.
//!
//! Ties: a GD prefers the lower-index AAV among equidistant ones; an AAV
//! evicts the higher-index GD among equally far ones.

use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::geometry::Point2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationMatrix {
    n_aavs: usize,
    gd_to_aav: Vec<Option<usize>>,
}

impl AssociationMatrix {
    pub fn empty(n_aavs: usize, n_gds: usize) -> Self {
        Self { n_aavs, gd_to_aav: vec![None; n_gds] }
    }

    pub fn from_assignment(n_aavs: usize, gd_to_aav: Vec<Option<usize>>) -> Self {
        assert!(gd_to_aav.iter().flatten().all(|&v| v < n_aavs), "AAV index out of range");
        Self { n_aavs, gd_to_aav }
    }

    pub fn n_aavs(&self) -> usize {
        self.n_aavs
    }

    pub fn n_gds(&self) -> usize {
        self.gd_to_aav.len()
    }

    pub fn aav_of(&self, gd: usize) -> Option<usize> {
        self.gd_to_aav[gd]
    }

    /// `X[v][g]`.
    pub fn get(&self, aav: usize, gd: usize) -> bool {
        self.gd_to_aav[gd] == Some(aav)
    }

    /// GDs served by `aav`, ascending.
    pub fn served_by(&self, aav: usize) -> Vec<usize> {
        (0..self.n_gds()).filter(|&g| self.gd_to_aav[g] == Some(aav)).collect()
    }

    pub fn load(&self, aav: usize) -> usize {
        self.gd_to_aav.iter().filter(|&&a| a == Some(aav)).count()
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.gd_to_aav
    }

    pub fn matched_count(&self) -> usize {
        self.gd_to_aav.iter().flatten().count()
    }

    /// Dense 0/1 rows, one per AAV.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n_aavs).map(|v| (0..self.n_gds()).map(|g| self.get(v, g) as u8).collect()).collect()
    }
}

/// Matching plus the number of proposals it took.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingTrace {
    pub matrix: AssociationMatrix,
    pub proposals: usize,
}

/// Strict GD-side preference: is AAV `a` better than AAV `b` for GD `g`?
pub fn gd_prefers(aavs: &[Point2], gd: Point2, a: usize, b: usize) -> bool {
    rank_key(aavs[a].distance(&gd), a).cmp(&rank_key(aavs[b].distance(&gd), b)) == Ordering::Less
}

/// Strict AAV-side preference: does AAV at `aav` rank GD `a` above GD `b`?
pub fn aav_prefers(aav: Point2, gds: &[Point2], a: usize, b: usize) -> bool {
    rank_key(aav.distance(&gds[a]), a).cmp(&rank_key(aav.distance(&gds[b]), b)) == Ordering::Less
}

fn rank_key(d: f64, index: usize) -> (OrdF64, usize) {
    (OrdF64(d), index)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn gs_associate(aavs: &[Point2], gds: &[Point2], capacity: usize) -> AssociationMatrix {
    gs_associate_traced(aavs, gds, capacity).matrix
}

pub fn gs_associate_traced(aavs: &[Point2], gds: &[Point2], capacity: usize) -> MatchingTrace {
    let n_aavs = aavs.len();
    let mut candidates: Vec<VecDeque<usize>> = gds
        .iter()
        .map(|gd| {
            let mut order: Vec<usize> = (0..n_aavs).collect();
            order.sort_by_key(|&v| rank_key(aavs[v].distance(gd), v));
            order.into()
        })
        .collect();
    let mut gd_to_aav: Vec<Option<usize>> = vec![None; gds.len()];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_aavs];
    let mut proposals = 0;

    while let Some(g) = (0..gds.len()).find(|&g| gd_to_aav[g].is_none() && !candidates[g].is_empty()) {
        let v = candidates[g][0];
        proposals += 1;
        gd_to_aav[g] = Some(v);
        members[v].push(g);
        if members[v].len() > capacity {
            let (pos, &worst) = members[v]
                .iter()
                .enumerate()
                .max_by_key(|&(_, &l)| rank_key(aavs[v].distance(&gds[l]), l))
                .expect("AAV over capacity has members");
            members[v].swap_remove(pos);
            gd_to_aav[worst] = None;
            candidates[worst].retain(|&a| a != v);
        }
    }
    MatchingTrace { matrix: AssociationMatrix { n_aavs, gd_to_aav }, proposals }
}

/// True when no GD-AAV pair would both rather be matched to each other
/// and no unmatched GD could be taken by an AAV with spare capacity.
pub fn is_stable(aavs: &[Point2], gds: &[Point2], capacity: usize, m: &AssociationMatrix) -> bool {
    if (0..aavs.len()).any(|v| m.load(v) > capacity) {
        return false;
    }
    for g in 0..gds.len() {
        for v in 0..aavs.len() {
            if m.aav_of(g) == Some(v) {
                continue;
            }
            let gd_wants = match m.aav_of(g) {
                None => true,
                Some(cur) => gd_prefers(aavs, gds[g], v, cur),
            };
            if !gd_wants {
                continue;
            }
            let served = m.served_by(v);
            let aav_wants = served.len() < capacity || served.iter().any(|&h| aav_prefers(aavs[v], gds, g, h));
            if aav_wants {
                return false;
            }
        }
    }
    true
}
