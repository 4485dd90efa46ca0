//! Non-learning policies.

use anyhow::Result;
use rand::Rng;
use sagin_core::codec::{encode_movement, ActionLayout};
use sagin_core::env::Environment;
use sagin_core::rng::StreamRng;

/// Anything that maps the current environment to a raw action.
pub trait Policy {
    fn act(&mut self, env: &Environment) -> Result<Vec<f64>>;
}

/// Uniform raws in `[-1, 1]` every slot.
pub struct RandomPolicy {
    rng: StreamRng,
}

impl RandomPolicy {
    pub fn new(rng: StreamRng) -> Self {
        Self { rng }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, env: &Environment) -> Result<Vec<f64>> {
        Ok((0..env.action_dim()).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
    }
}

/// Nearest-GD tour: each AAV flies at full step toward the nearest GD it
/// has not visited in its current tour and that no other AAV is heading
/// for. Reaching a GD marks it visited; a finished tour starts over.
/// Offload and bandwidth raws are uniform.
pub struct GreedyPolicy {
    rng: StreamRng,
    targets: Vec<Option<usize>>,
    visited: Vec<Vec<bool>>,
}

impl GreedyPolicy {
    pub fn new(rng: StreamRng) -> Self {
        Self { rng, targets: Vec::new(), visited: Vec::new() }
    }

    pub fn targets(&self) -> &[Option<usize>] {
        &self.targets
    }

    fn pick(&mut self, v: usize, env: &Environment) -> Option<usize> {
        let s = env.scenario();
        let gds = s.gd_positions();
        let here = env.world().aav_positions[v];
        let claimed: Vec<usize> = self.targets.iter().enumerate().filter(|(u, _)| *u != v).filter_map(|(_, t)| *t).collect();
        let nearest = |visited: &[bool]| {
            (0..gds.len())
                .filter(|&g| !visited[g] && !claimed.contains(&g))
                .min_by(|&a, &b| here.distance(&gds[a]).total_cmp(&here.distance(&gds[b])).then(a.cmp(&b)))
        };
        nearest(&self.visited[v]).or_else(|| {
            let keep = self.targets[v];
            self.visited[v].iter_mut().for_each(|x| *x = false);
            if let Some(g) = keep {
                self.visited[v][g] = true;
            }
            nearest(&self.visited[v]).or(keep)
        })
    }
}

impl Policy for GreedyPolicy {
    fn act(&mut self, env: &Environment) -> Result<Vec<f64>> {
        let s = env.scenario();
        let layout = ActionLayout::of(s);
        if self.targets.len() != s.n_aavs {
            self.targets = vec![None; s.n_aavs];
            self.visited = vec![vec![false; s.n_gds]; s.n_aavs];
        }
        let mut action: Vec<f64> = (0..layout.dim()).map(|_| self.rng.random_range(-1.0..=1.0)).collect();
        let gds = s.gd_positions();
        for v in 0..s.n_aavs {
            let here = env.world().aav_positions[v];
            if let Some(g) = self.targets[v] {
                if here.distance(&gds[g]) < 1e-6 {
                    self.visited[v][g] = true;
                    self.targets[v] = None;
                }
            }
            if self.targets[v].is_none() {
                self.targets[v] = self.pick(v, env);
            }
            let (dx, dy) = match self.targets[v] {
                Some(g) => (gds[g].x - here.x, gds[g].y - here.y),
                None => (0.0, 0.0),
            };
            let (rd, ra) = encode_movement(dx, dy, s.max_step());
            action[layout.distance_index(v)] = rd;
            action[layout.direction_index(v)] = ra;
        }
        Ok(action)
    }
}
