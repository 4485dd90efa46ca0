//! Plot-ready CSV artifacts. Trajectory and energy tables are derived
//! from the event log alone, so they can be regenerated from
//! `events.jsonl` without rerunning anything.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use sagin_core::env::EpisodeSummary;
use sagin_core::events::{read_events, EventWriter, SlotRecord};
use sagin_learn::trainer::EpisodeRow;

use crate::runner::{Algo, EpisodeLog};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const ENERGY_FILE: &str = "energy.csv";

/// One episode of any algorithm. Loss columns are empty for baselines.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub algo: Algo,
    pub seed: u64,
    pub episode: usize,
    pub episode_seed: u64,
    pub summary: EpisodeSummary,
    pub critic_loss: Option<f64>,
    pub actor_vlb_loss: Option<f64>,
    pub actor_entropy_loss: Option<f64>,
}

impl MetricsRow {
    pub fn from_log(algo: Algo, seed: u64, episode: usize, log: &EpisodeLog) -> Self {
        Self {
            algo,
            seed,
            episode,
            episode_seed: log.seed,
            summary: log.summary,
            critic_loss: None,
            actor_vlb_loss: None,
            actor_entropy_loss: None,
        }
    }

    pub fn from_training(seed: u64, row: &EpisodeRow) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            algo: Algo::Qagob,
            seed,
            episode: row.episode,
            episode_seed: row.seed,
            summary: row.summary,
            critic_loss: finite(row.critic_loss),
            actor_vlb_loss: finite(row.actor_vlb_loss),
            actor_entropy_loss: finite(row.actor_entropy_loss),
        }
    }
}

/// Serializes rows as CSV with a header. An empty table still gets its header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(BufWriter::new(file));
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const METRICS_HEADER: &[&str] = &[
    "algo", "seed", "episode", "episode_seed", "reward", "f1", "f2", "f3", "mec_rate", "dc_rate", "offload_ratio",
    "tasks_generated", "tasks_completed", "tasks_failed", "tasks_expired", "penalty_events", "gd_tx_energy",
    "aav_move_energy", "aav_compute_energy", "sat_tx_energy", "sat_compute_energy", "critic_loss", "actor_vlb_loss",
    "actor_entropy_loss",
];

impl MetricsRow {
    /// Fields in `METRICS_HEADER` order; floats use shortest round-trip
    /// formatting and absent values are empty.
    pub fn record(&self) -> Vec<String> {
        let s = &self.summary;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        vec![
            self.algo.to_string(),
            self.seed.to_string(),
            self.episode.to_string(),
            self.episode_seed.to_string(),
            s.reward.to_string(),
            s.f1.to_string(),
            s.f2.to_string(),
            s.f3.to_string(),
            s.mec_rate.to_string(),
            s.dc_rate.to_string(),
            s.offload_ratio.to_string(),
            s.tasks_generated.to_string(),
            s.tasks_completed.to_string(),
            s.tasks_failed.to_string(),
            s.tasks_expired.to_string(),
            s.penalty_events.to_string(),
            s.gd_tx_energy.to_string(),
            s.aav_move_energy.to_string(),
            s.aav_compute_energy.to_string(),
            s.sat_tx_energy.to_string(),
            s.sat_compute_energy.to_string(),
            opt(self.critic_loss),
            opt(self.actor_vlb_loss),
            opt(self.actor_entropy_loss),
        ]
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Position an AAV served from during one slot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub seed: u64,
    pub episode: u64,
    pub slot: u64,
    pub aav: usize,
    pub x: f64,
    pub y: f64,
    /// `start` on an episode's first slot, `end` on its last, empty otherwise.
    pub flag: &'static str,
}

pub const TRAJECTORY_HEADER: &[&str] = &["seed", "episode", "slot", "aav", "x", "y", "flag"];

/// One row per AAV per slot, in log order.
pub fn trajectories(records: &[SlotRecord]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let same = |j: Option<&SlotRecord>| j.is_some_and(|o| o.seed == r.seed && o.episode == r.episode);
        let first = i == 0 || !same(records.get(i - 1));
        let last = !same(records.get(i + 1));
        let flag = match (first, last) {
            (true, _) => "start",
            (false, true) => "end",
            _ => "",
        };
        for (v, p) in r.info.positions_after.iter().enumerate() {
            rows.push(TrajectoryRow { seed: r.seed, episode: r.episode, slot: r.info.slot, aav: v, x: p.x, y: p.y, flag });
        }
    }
    rows
}

/// Per-episode energy by component, joules, plus the satellite offload
/// ratio in percent of served tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRow {
    pub seed: u64,
    pub episode: u64,
    pub gd_tx: f64,
    pub aav_move: f64,
    pub aav_compute: f64,
    pub sat_tx: f64,
    pub sat_compute: f64,
    pub total: f64,
    pub served_tasks: u64,
    pub offloaded_tasks: u64,
    pub offload_ratio: f64,
}

pub const ENERGY_HEADER: &[&str] = &[
    "seed", "episode", "gd_tx", "aav_move", "aav_compute", "sat_tx", "sat_compute", "total", "served_tasks",
    "offloaded_tasks", "offload_ratio",
];

/// Sums each episode's per-slot energy rows and recounts offloads from the
/// per-task records.
pub fn energy_breakdown(records: &[SlotRecord]) -> Vec<EnergyRow> {
    let mut rows: Vec<EnergyRow> = Vec::new();
    for r in records {
        let fresh = rows.last().is_none_or(|l| l.seed != r.seed || l.episode != r.episode);
        if fresh {
            rows.push(EnergyRow {
                seed: r.seed,
                episode: r.episode,
                gd_tx: 0.0,
                aav_move: 0.0,
                aav_compute: 0.0,
                sat_tx: 0.0,
                sat_compute: 0.0,
                total: 0.0,
                served_tasks: 0,
                offloaded_tasks: 0,
                offload_ratio: 0.0,
            });
        }
        let row = rows.last_mut().expect("row pushed above");
        let e = &r.info.energy;
        row.gd_tx += e.gd_tx;
        row.aav_move += e.aavs.iter().map(|a| a.move_energy).sum::<f64>();
        row.aav_compute += e.aavs.iter().map(|a| a.compute_energy).sum::<f64>();
        row.sat_tx += e.sat_tx;
        row.sat_compute += e.sat_compute;
        row.served_tasks += r.info.outcome.tasks.len() as u64;
        row.offloaded_tasks += r.info.outcome.tasks.iter().filter(|t| t.offload).count() as u64;
    }
    for row in &mut rows {
        row.total = row.gd_tx + row.aav_move + row.aav_compute + row.sat_tx + row.sat_compute;
        row.offload_ratio =
            if row.served_tasks == 0 { 0.0 } else { 100.0 * row.offloaded_tasks as f64 / row.served_tasks as f64 };
    }
    rows
}

/// Records of `(run seed, episode, log)` triples, in order.
pub fn records<'a>(logs: impl IntoIterator<Item = (u64, usize, &'a EpisodeLog)>) -> Vec<SlotRecord> {
    let mut out = Vec::new();
    for (seed, episode, log) in logs {
        out.extend(log.steps.iter().map(|info| SlotRecord::new(episode as u64, seed, info.clone())));
    }
    out
}

pub fn write_events<'a>(path: &Path, logs: impl IntoIterator<Item = (u64, usize, &'a EpisodeLog)>) -> Result<Vec<SlotRecord>> {
    let records = records(logs);
    write_records(path, &records)?;
    Ok(records)
}

pub fn write_records(path: &Path, records: &[SlotRecord]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = EventWriter::new(BufWriter::new(file));
    for r in records {
        w.write(r)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn load_events(path: &Path) -> Result<Vec<SlotRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_events(BufReader::new(file))?)
}

/// Writes the trajectory and energy tables derived from `records` into `dir`.
pub fn export_all(records: &[SlotRecord], dir: &Path) -> Result<()> {
    write_csv(&dir.join(TRAJECTORIES_FILE), &trajectories(records), TRAJECTORY_HEADER)?;
    write_csv(&dir.join(ENERGY_FILE), &energy_breakdown(records), ENERGY_HEADER)?;
    Ok(())
}
