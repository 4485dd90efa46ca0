//! Static world description and its config-file form.
//!
//! A scenario is a TOML document. Every key is optional; absent keys take
//! the defaults below (a 3 km square, 4 AAVs, 30 GDs, 5 MHz per AAV, ...).
//!
//! ```toml
//! seed = 7
//! n_aavs = 4
//! n_gds = 30
//! horizon = 300
//! initial_aav_positions = [[-750.0, -750.0], [-750.0, 750.0], [750.0, -750.0], [750.0, 750.0]]
//!
//! [area]
//! x_min = -1500.0
//! y_min = -1500.0
//! x_max = 1500.0
//! y_max = 1500.0
//!
//! [radio]
//! rain_model = { kind = "weibull", shape = 2.0, scale = 6.0 }
//!
//! [reward]
//! mode = "joint"
//! ```
//!
//! Sections: `area`, `radio`, `compute`, `workload`, `energy`, `reward`.
//! Unknown keys are rejected. Overrides use dotted paths
//! (`radio.p_gd=0.5`, `n_gds=8`) and are applied to the parsed document
//! before defaults are filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyParams;
use crate::env::RewardWeights;
use crate::geometry::{AreaBounds, Point2};
use crate::rng::{SeededRng, Stream};

/// Environment variable that replaces the config seed.
pub const SEED_ENV_VAR: &str = "SAGIN_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RainModel {
    /// Use `rain_atten_db` every episode.
    #[default]
    Fixed,
    /// Draw the attenuation (dB) from Weibull(shape, scale) once per episode.
    Weibull { shape: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Hz.
    pub carrier_freq: f64,
    /// dBm/Hz.
    pub noise_psd: f64,
    pub los_n1: f64,
    pub los_n2: f64,
    /// dB.
    pub excess_loss_los: f64,
    /// dB.
    pub excess_loss_nlos: f64,
    /// W.
    pub p_gd: f64,
    pub p_aav: f64,
    pub p_sat: f64,
    /// Hz, shared by the GDs of one AAV.
    pub bandwidth_aav: f64,
    /// Hz, shared by all AAVs connected to the satellite.
    pub bandwidth_sat: f64,
    pub antenna_gain_aav: f64,
    pub antenna_gain_sat: f64,
    /// dB.
    pub rain_atten_db: f64,
    pub rain_model: RainModel,
    /// bits/s; GDs whose uplink falls below this are not served MEC this slot.
    pub rate_threshold: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            carrier_freq: 2.0e9,
            noise_psd: -174.0,
            los_n1: 9.61,
            los_n2: 0.16,
            excess_loss_los: 0.1,
            excess_loss_nlos: 21.0,
            p_gd: 0.3,
            p_aav: 0.5,
            p_sat: 20.0,
            bandwidth_aav: 5.0e6,
            bandwidth_sat: 1.0e6,
            antenna_gain_aav: 1.0e5,
            antenna_gain_sat: 1.0e5,
            rain_atten_db: 6.0,
            rain_model: RainModel::Fixed,
            rate_threshold: 1.0e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeParams {
    /// CPU cycles per task bit, on both the AAVs and the satellite.
    pub cycles_per_bit: f64,
    /// Hz.
    pub freq_aav: f64,
    /// Hz.
    pub freq_sat: f64,
    /// J/cycle on the AAV.
    pub energy_per_cycle: f64,
}

impl Default for ComputeParams {
    fn default() -> Self {
        Self { cycles_per_bit: 1000.0, freq_aav: 8.0e9, freq_sat: 20.0e9, energy_per_cycle: 8.2e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    /// Task density coefficient, 1/slot.
    pub task_density: f64,
    /// Task size is Poisson(mec_poisson_rate) * 1e5 bits.
    pub mec_poisson_rate: f64,
    /// Per-slot DC data is Poisson(dc_poisson_rate) * 1e4 bits.
    pub dc_poisson_rate: f64,
    /// Seconds, `[min, max]`.
    pub deadline_range: [f64; 2],
    /// Seconds, `[min, max]`.
    pub tolerance_range: [f64; 2],
    pub result_ratio_range: [f64; 2],
}

impl Default for WorkloadParams {
    fn default() -> Self {
        Self {
            task_density: 0.1,
            mec_poisson_rate: 6.0,
            dc_poisson_rate: 10.0,
            deadline_range: [10.0, 30.0],
            tolerance_range: [0.75, 1.75],
            result_ratio_range: [0.1, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub area: AreaBounds,
    pub n_aavs: usize,
    pub n_gds: usize,
    /// m.
    pub aav_altitude: f64,
    /// m.
    pub sat_altitude: f64,
    /// Ground projection of the (static) satellite.
    pub sat_position: Point2,
    pub max_served: usize,
    /// m.
    pub safe_distance: f64,
    /// m/s.
    pub max_speed: f64,
    /// s.
    pub slot_length: f64,
    /// Slots per episode.
    pub horizon: usize,
    pub radio: RadioParams,
    pub compute: ComputeParams,
    pub workload: WorkloadParams,
    pub energy: EnergyParams,
    pub reward: RewardWeights,
    /// Empty means "spread on a grid over the area".
    pub initial_aav_positions: Vec<Point2>,
    /// Sampled from the init stream of `seed` when absent.
    pub gd_positions: Option<Vec<Point2>>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            area: AreaBounds::default(),
            n_aavs: 4,
            n_gds: 30,
            aav_altitude: 100.0,
            sat_altitude: 800.0e3,
            sat_position: Point2::new(0.0, 0.0),
            max_served: 4,
            safe_distance: 50.0,
            max_speed: 50.0,
            slot_length: 1.0,
            horizon: 300,
            radio: RadioParams::default(),
            compute: ComputeParams::default(),
            workload: WorkloadParams::default(),
            energy: EnergyParams::default(),
            reward: RewardWeights::default(),
            initial_aav_positions: Vec::new(),
            gd_positions: None,
        }
    }
}

impl Scenario {
    /// Toy world used by the learning smoke tests: 2 AAVs, 8 GDs, capacity 2, 60 slots.
    pub fn toy() -> Self {
        let mut s = Self { n_aavs: 2, n_gds: 8, max_served: 2, horizon: 60, ..Self::default() };
        s.resolve().expect("toy scenario is valid");
        s
    }

    /// Largest displacement allowed in one slot.
    pub fn max_step(&self) -> f64 {
        self.max_speed * self.slot_length
    }

    pub fn gd_positions(&self) -> &[Point2] {
        self.gd_positions.as_deref().expect("scenario GD positions are resolved at load time")
    }

    pub fn action_dim(&self) -> usize {
        self.n_aavs * (2 + 2 * self.max_served)
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_aavs + 4 * self.n_gds + 1
    }

    /// Parses a TOML document, applies dotted-path overrides, fills
    /// defaults, samples missing GD positions and validates.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut doc, key, value)?;
        }
        let mut scenario: Scenario =
            doc.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        scenario.resolve()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Fills derived defaults and validates. Idempotent.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        if self.initial_aav_positions.is_empty() {
            self.initial_aav_positions = grid_layout(self.n_aavs, &self.area);
        }
        self.validate_static()?;
        if self.gd_positions.is_none() {
            self.gd_positions = Some(sample_gd_positions(self, &SeededRng::new(self.seed)));
        }
        let gds = self.gd_positions.as_ref().unwrap();
        if gds.len() != self.n_gds {
            return Err(ConfigError::invalid("gd_positions", format!("expected {} points, got {}", self.n_gds, gds.len())));
        }
        if gds.iter().any(|p| !p.is_finite() || !self.area.contains(p)) {
            return Err(ConfigError::invalid("gd_positions", "point outside area bounds"));
        }
        Ok(())
    }

    fn validate_static(&self) -> Result<(), ConfigError> {
        let a = &self.area;
        if !(a.x_min < a.x_max && a.y_min < a.y_max) {
            return Err(ConfigError::invalid("area", "need x_min < x_max and y_min < y_max"));
        }
        if self.n_aavs == 0 {
            return Err(ConfigError::invalid("n_aavs", "must be at least 1"));
        }
        if self.n_gds == 0 {
            return Err(ConfigError::invalid("n_gds", "must be at least 1"));
        }
        if self.max_served == 0 {
            return Err(ConfigError::invalid("max_served", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::invalid("horizon", "must be at least 1"));
        }
        positive("safe_distance", self.safe_distance)?;
        positive("max_speed", self.max_speed)?;
        positive("slot_length", self.slot_length)?;
        positive("aav_altitude", self.aav_altitude)?;
        positive("sat_altitude", self.sat_altitude)?;
        if self.sat_altitude <= self.aav_altitude {
            return Err(ConfigError::invalid("sat_altitude", "must exceed aav_altitude"));
        }

        let r = &self.radio;
        for (name, v) in [
            ("radio.carrier_freq", r.carrier_freq),
            ("radio.p_gd", r.p_gd),
            ("radio.p_aav", r.p_aav),
            ("radio.p_sat", r.p_sat),
            ("radio.bandwidth_aav", r.bandwidth_aav),
            ("radio.bandwidth_sat", r.bandwidth_sat),
            ("radio.antenna_gain_aav", r.antenna_gain_aav),
            ("radio.antenna_gain_sat", r.antenna_gain_sat),
            ("radio.los_n1", r.los_n1),
        ] {
            positive(name, v)?;
        }
        nonnegative("radio.los_n2", r.los_n2)?;
        nonnegative("radio.rain_atten_db", r.rain_atten_db)?;
        nonnegative("radio.rate_threshold", r.rate_threshold)?;
        finite("radio.noise_psd", r.noise_psd)?;
        finite("radio.excess_loss_los", r.excess_loss_los)?;
        finite("radio.excess_loss_nlos", r.excess_loss_nlos)?;
        if let RainModel::Weibull { shape, scale } = r.rain_model {
            positive("radio.rain_model.shape", shape)?;
            positive("radio.rain_model.scale", scale)?;
        }

        let c = &self.compute;
        positive("compute.cycles_per_bit", c.cycles_per_bit)?;
        positive("compute.freq_aav", c.freq_aav)?;
        positive("compute.freq_sat", c.freq_sat)?;
        positive("compute.energy_per_cycle", c.energy_per_cycle)?;

        let w = &self.workload;
        positive("workload.task_density", w.task_density)?;
        nonnegative("workload.mec_poisson_rate", w.mec_poisson_rate)?;
        nonnegative("workload.dc_poisson_rate", w.dc_poisson_rate)?;
        range("workload.deadline_range", w.deadline_range, 0.0, f64::INFINITY)?;
        range("workload.tolerance_range", w.tolerance_range, 0.0, f64::INFINITY)?;
        let rr = w.result_ratio_range;
        range("workload.result_ratio_range", rr, 0.0, 1.0)?;
        if rr[0] <= 0.0 || rr[1] >= 1.0 {
            return Err(ConfigError::invalid("workload.result_ratio_range", "bounds must lie strictly inside (0, 1)"));
        }

        self.energy.validate().map_err(|field| ConfigError::invalid(field, "must be positive"))?;
        self.reward.validate().map_err(|field| ConfigError::invalid(field, "must be non-negative"))?;

        if self.initial_aav_positions.len() != self.n_aavs {
            return Err(ConfigError::invalid(
                "initial_aav_positions",
                format!("expected {} points, got {}", self.n_aavs, self.initial_aav_positions.len()),
            ));
        }
        if self.initial_aav_positions.iter().any(|p| !p.is_finite() || !self.area.contains(p)) {
            return Err(ConfigError::invalid("initial_aav_positions", "point outside area bounds"));
        }
        let ps = &self.initial_aav_positions;
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                if ps[i].distance(&ps[j]) < self.safe_distance {
                    return Err(ConfigError::invalid(
                        "safe_distance",
                        format!("initial AAVs {i} and {j} are closer than {} m", self.safe_distance),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must be positive, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("must be non-negative, got {v}")))
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, "must be finite"))
    }
}

fn range(field: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<(), ConfigError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi {
        Ok(())
    } else {
        Err(ConfigError::invalid(field, format!("need {lo} <= min <= max <= {hi}, got {r:?}")))
    }
}

/// AAVs at the cell centres of a `k x k` grid, `k = ceil(sqrt(n))`,
/// filled column by column. Four AAVs on the default area land at
/// (±750, ±750).
fn grid_layout(n: usize, area: &AreaBounds) -> Vec<Point2> {
    let k = (n as f64).sqrt().ceil().max(1.0) as usize;
    let (cw, ch) = (area.width() / k as f64, area.height() / k as f64);
    (0..n)
        .map(|i| {
            let (col, row) = (i / k, i % k);
            Point2::new(area.x_min + cw * (col as f64 + 0.5), area.y_min + ch * (row as f64 + 0.5))
        })
        .collect()
}

/// Uniform GD placement strictly inside the area, from the init stream.
pub fn sample_gd_positions(scenario: &Scenario, rng: &SeededRng) -> Vec<Point2> {
    use rand::Rng;
    let mut init = rng.stream(Stream::Init);
    let a = scenario.area;
    let mut open = |lo: f64, hi: f64| loop {
        let v = init.random_range(lo..hi);
        if v > lo {
            break v;
        }
    };
    (0..scenario.n_gds).map(|_| Point2::new(open(a.x_min, a.x_max), open(a.y_min, a.y_max))).collect()
}

fn apply_override(doc: &mut toml::Table, key: &str, raw: &str) -> Result<(), ConfigError> {
    let value = parse_override_value(raw);
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::Syntax(format!("empty override key `{key}`")))?;
    let mut table = doc;
    for part in parts {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Syntax(format!("override `{key}`: `{part}` is not a section")))?;
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `key=value` into its parts.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Reads a scenario file, applies overrides and the `SAGIN_SEED`
/// environment variable.
pub fn load_scenario_with(path: &Path, overrides: &[(String, String)]) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut all = overrides.to_vec();
    if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
        let seed: u64 = seed.trim().parse().map_err(|_| ConfigError::invalid("seed", format!("{SEED_ENV_VAR}={seed} is not an integer")))?;
        all.push(("seed".to_string(), seed.to_string()));
    }
    Scenario::from_toml_str(&text, &all)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    load_scenario_with(path, &[])
}
