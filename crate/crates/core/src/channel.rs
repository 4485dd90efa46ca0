//! Air-to-ground and satellite link models.
//!
//! All distances are full 3D norms. Rates are Shannon capacities over the
//! allocated bandwidth; noise is the thermal PSD times that bandwidth.

use std::f64::consts::PI;

use thiserror::Error;

use crate::association::AssociationMatrix;
use crate::geometry::Point3;
use crate::scenario::RadioParams;

/// m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ChannelError {
    #[error("transmitter and receiver coincide")]
    DegenerateGeometry,
    #[error("bandwidth must be positive, got {0} Hz")]
    InvalidAllocation(f64),
}

/// dBm/Hz to W/Hz. The only place this conversion happens.
pub fn noise_psd_watts(noise_psd_dbm: f64) -> f64 {
    10f64.powf((noise_psd_dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Elevation angle in degrees, `(180/pi) * atan(H / d)` with `d` the 3D distance.
pub fn elevation_deg(aav: Point3, gd: Point3) -> f64 {
    let d = aav.distance(&gd);
    (aav.z - gd.z).atan2(d).to_degrees()
}

/// Logistic LoS probability `1 / (1 + n1 exp(-n2 (theta - n1)))`.
pub fn los_probability(aav: Point3, gd: Point3, n1: f64, n2: f64) -> f64 {
    los_probability_at_angle(elevation_deg(aav, gd), n1, n2)
}

pub fn los_probability_at_angle(theta_deg: f64, n1: f64, n2: f64) -> f64 {
    1.0 / (1.0 + n1 * (-n2 * (theta_deg - n1)).exp())
}

/// Free-space loss `20 log d + 20 log f_c + 20 log(4 pi / c)` in dB.
pub fn free_space_loss_db(distance: f64, carrier_freq: f64) -> f64 {
    20.0 * distance.log10() + 20.0 * carrier_freq.log10() + 20.0 * (4.0 * PI / SPEED_OF_LIGHT).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub distance_3d: f64,
    pub los_prob: f64,
    pub path_loss_db: f64,
    /// Linear power gain, `10^(-PL/10)`.
    pub gain: f64,
}

pub fn link_budget(aav: Point3, gd: Point3, radio: &RadioParams) -> Result<LinkBudget, ChannelError> {
    let d = aav.distance(&gd);
    if !(d > 0.0) {
        return Err(ChannelError::DegenerateGeometry);
    }
    let los = los_probability(aav, gd, radio.los_n1, radio.los_n2);
    let pl = free_space_loss_db(d, radio.carrier_freq) + los * radio.excess_loss_los + (1.0 - los) * radio.excess_loss_nlos;
    Ok(LinkBudget { distance_3d: d, los_prob: los, path_loss_db: pl, gain: 10f64.powf(-pl / 10.0) })
}

pub fn path_loss_db(aav: Point3, gd: Point3, radio: &RadioParams) -> Result<f64, ChannelError> {
    link_budget(aav, gd, radio).map(|b| b.path_loss_db)
}

/// `B log2(1 + S / (I + N0 B))`.
pub fn shannon_rate(bandwidth: f64, signal: f64, interference: f64, noise_psd: f64) -> Result<f64, ChannelError> {
    if !(bandwidth > 0.0) {
        return Err(ChannelError::InvalidAllocation(bandwidth));
    }
    Ok(bandwidth * (1.0 + signal / (interference + noise_psd * bandwidth)).log2())
}

/// Uplink GD -> AAV under co-channel interference `interference` (W).
pub fn g2a_rate(bandwidth: f64, gain: f64, interference: f64, radio: &RadioParams) -> Result<f64, ChannelError> {
    shannon_rate(bandwidth, radio.p_gd * gain, interference, noise_psd_watts(radio.noise_psd))
}

/// Interference-free downlink AAV -> GD.
pub fn a2g_rate(bandwidth: f64, gain: f64, radio: &RadioParams) -> Result<f64, ChannelError> {
    shannon_rate(bandwidth, radio.p_aav * gain, 0.0, noise_psd_watts(radio.noise_psd))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatDirection {
    /// AAV -> satellite.
    Up,
    /// Satellite -> AAV.
    Down,
}

/// `lambda^2 G_v G_s / (4 pi d)^2 * 10^(-F_rain/10)`.
pub fn sat_attenuation(distance: f64, rain_db: f64, radio: &RadioParams) -> f64 {
    let lambda = SPEED_OF_LIGHT / radio.carrier_freq;
    lambda * lambda * radio.antenna_gain_aav * radio.antenna_gain_sat / (4.0 * PI * distance).powi(2) * rain_multiplier(rain_db)
}

pub fn rain_multiplier(rain_db: f64) -> f64 {
    10f64.powf(-rain_db / 10.0)
}

/// Satellite bandwidth share of one AAV.
pub fn sat_bandwidth_share(radio: &RadioParams, n_connected: usize) -> f64 {
    radio.bandwidth_sat / n_connected.max(1) as f64
}

/// AAV <-> satellite rate when `n_connected` AAVs split `B_s` evenly.
pub fn sat_link_rate(
    direction: SatDirection,
    distance: f64,
    n_connected: usize,
    rain_db: f64,
    radio: &RadioParams,
) -> f64 {
    let b = sat_bandwidth_share(radio, n_connected);
    let p = match direction {
        SatDirection::Up => radio.p_aav,
        SatDirection::Down => radio.p_sat,
    };
    let gamma = sat_attenuation(distance, rain_db, radio);
    b * (1.0 + p * gamma / (noise_psd_watts(radio.noise_psd) * b)).log2()
}

/// Aggregate co-channel interference `I[v][g]` seen by AAV `v` while
/// receiving from GD `g`: the sum of `p_g h(v, l)` over every GD `l`
/// associated with some other AAV.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceField {
    per_link: Vec<Vec<f64>>,
}

impl InterferenceField {
    pub fn at(&self, aav: usize, gd: usize) -> f64 {
        self.per_link[aav][gd]
    }

    pub fn n_aavs(&self) -> usize {
        self.per_link.len()
    }
}

/// `gains[v][g]` is the linear gain between AAV `v` and GD `g`.
pub fn build_interference_field(gains: &[Vec<f64>], association: &AssociationMatrix, radio: &RadioParams) -> InterferenceField {
    let n_aavs = gains.len();
    let n_gds = association.n_gds();
    let per_link = (0..n_aavs)
        .map(|v| {
            (0..n_gds)
                .map(|g| {
                    (0..n_gds)
                        .filter(|&l| l != g && matches!(association.aav_of(l), Some(j) if j != v))
                        .map(|l| radio.p_gd * gains[v][l])
                        .sum()
                })
                .collect()
        })
        .collect();
    InterferenceField { per_link }
}
