//! `sagin` command line: argument types and one function per verb.
//!
//! Every verb that runs episodes writes, into `--out`:
//! `metrics.csv`, `events.jsonl`, `trajectories.csv`, `energy.csv`,
//! `manifest.json`, the resolved `scenario.toml` and `train.toml`, and
//! (for training) `checkpoints/seed_<n>/`. Seeds run one after another;
//! a failing seed is recorded in the manifest and the others still run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sagin_core::env::StepInfo;
use sagin_core::events::SlotRecord;
use sagin_core::scenario::Scenario;
use sagin_core::OptimizationMode;
use sagin_learn::nn::Checkpoint;
use sagin_learn::trainer::{train, CheckpointDir, EpisodeRow, TrainObserver};
use sagin_learn::Agent;

use crate::config::{parse_seeds, resolve, Profile, ResolvedConfig, RunManifest, SeedStatus};
use crate::export::{
    export_all, load_events, write_metrics, write_records, MetricsRow, EVENTS_FILE, METRICS_FILE,
};
use crate::runner::{run_agent, run_baseline, Algo, EpisodeLog};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const TRAIN_FILE: &str = "train.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SWEEP_FILE: &str = "sweep.csv";
const DEFAULT_EVAL_EPISODES: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "sagin", version, about = "Train, evaluate and compare AAV-satellite edge computing policies")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario TOML, optionally with a `[train]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated run seeds; defaults to the scenario seed.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    #[arg(long)]
    pub mode: Option<OptimizationMode>,
    /// Training episodes, or evaluation episodes per seed.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// `key=value`; `train.` keys go to the trainer. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Denoising steps N.
    DenoiseSteps,
    /// GDs one AAV can serve per slot.
    MaxServed,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            SweepParam::DenoiseSteps => "train.denoise_steps",
            SweepParam::MaxServed => "max_served",
        }
    }

    fn default_values(self) -> Vec<usize> {
        match self {
            SweepParam::DenoiseSteps => vec![1, 5, 10, 15, 25],
            SweepParam::MaxServed => vec![2, 3, 4, 5, 6],
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Train the diffusion agent on every seed.
    Train(RunArgs),
    /// Run a saved agent.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the random or greedy baseline.
    Baseline(RunArgs),
    /// Rebuild trajectory and energy tables from an event log.
    Export {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values; defaults to the standard grid.
        #[arg(long)]
        values: Option<String>,
    },
}

/// Runs a parsed command. `Ok(false)` means some seed did not complete.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.verb {
        Verb::Train(run) => {
            let algo = run.algo.unwrap_or(Algo::Qagob);
            if algo != Algo::Qagob {
                bail!("train only supports --algo qagob; use `baseline` for {algo}");
            }
            Ok(train_command(&run, "train")?.all_completed())
        }
        Verb::Eval { run, checkpoint } => Ok(eval_command(&run, &checkpoint)?.all_completed()),
        Verb::Baseline(run) => Ok(baseline_command(&run)?.all_completed()),
        Verb::Export { events, out } => {
            std::fs::create_dir_all(&out)?;
            export_all(&load_events(&events)?, &out)?;
            Ok(true)
        }
        Verb::Sweep { run, param, values } => sweep_command(&run, param, values.as_deref()),
    }
}

struct Prepared {
    resolved: ResolvedConfig,
    scenario: Arc<Scenario>,
    seeds: Vec<u64>,
    manifest: RunManifest,
}

fn prepare(run: &RunArgs, verb: &str, algo: Algo, checkpoint: Option<&Path>) -> Result<Prepared> {
    let mut resolved = resolve(run.config.as_deref(), &run.overrides, run.mode, run.profile)?;
    if let Some(e) = run.episodes {
        resolved.train.episodes = e;
    }
    resolved.train.validate()?;
    let seeds = match &run.seed {
        Some(s) => parse_seeds(s)?,
        None => vec![resolved.scenario.seed],
    };
    std::fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    let episodes = match algo {
        Algo::Qagob if checkpoint.is_none() => resolved.train.episodes,
        _ => run.episodes.unwrap_or(DEFAULT_EVAL_EPISODES),
    };
    let manifest = RunManifest {
        verb: verb.to_string(),
        scenario_path: run.config.clone(),
        algorithm: algo,
        seeds: seeds.clone(),
        output_dir: run.out.clone(),
        mode: resolved.scenario.reward.mode,
        overrides: run.overrides.iter().filter_map(|o| o.split_once('=')).map(|(k, v)| (k.trim().into(), v.trim().into())).collect(),
        episodes,
        profile: run.profile,
        checkpoint: checkpoint.map(Path::to_path_buf),
        status: BTreeMap::new(),
    };
    std::fs::write(run.out.join(SCENARIO_FILE), resolved.scenario.to_toml_string())?;
    std::fs::write(run.out.join(TRAIN_FILE), toml::to_string(&resolved.train)?)?;
    let scenario = Arc::new(resolved.scenario.clone());
    Ok(Prepared { resolved, scenario, seeds, manifest })
}

fn finish(out: &Path, manifest: &RunManifest, rows: &[MetricsRow], records: &[SlotRecord]) -> Result<()> {
    write_metrics(&out.join(METRICS_FILE), rows)?;
    write_records(&out.join(EVENTS_FILE), records)?;
    export_all(records, out)?;
    std::fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// Collects training rows, prints progress, writes checkpoints and keeps
/// the per-slot records of the final episode.
struct TrainLog {
    seed: u64,
    last_episode: usize,
    rows: Vec<MetricsRow>,
    records: Vec<SlotRecord>,
    checkpoints: CheckpointDir,
}

impl TrainObserver for TrainLog {
    fn on_step(&mut self, episode: usize, env: usize, _seed: u64, info: &StepInfo) {
        if episode == self.last_episode && env == 0 {
            self.records.push(SlotRecord::new(episode as u64, self.seed, info.clone()));
        }
    }

    fn on_episode(&mut self, row: &EpisodeRow) {
        let s = &row.summary;
        println!(
            "train seed={} episode={} env={} reward={:.3} f1={:.4} f2={:.4e} f3={:.1} updates={}",
            self.seed, row.episode, row.env, s.reward, s.f1, s.f2, s.f3, row.updates
        );
        self.rows.push(MetricsRow::from_training(self.seed, row));
    }

    fn on_checkpoint(&mut self, episode: usize, checkpoint: &Checkpoint) {
        self.checkpoints.on_checkpoint(episode, checkpoint);
    }
}

/// Trains every seed; used by `train` and by each sweep point.
pub fn train_command(run: &RunArgs, verb: &str) -> Result<RunManifest> {
    let Prepared { resolved, scenario, seeds, mut manifest } = prepare(run, verb, Algo::Qagob, None)?;
    let (mut rows, mut records) = (Vec::new(), Vec::new());
    for &seed in &seeds {
        let ck_dir = run.out.join(CHECKPOINT_DIR).join(format!("seed_{seed}"));
        std::fs::create_dir_all(&ck_dir)?;
        let mut log = TrainLog {
            seed,
            last_episode: resolved.train.episodes.saturating_sub(1),
            rows: Vec::new(),
            records: Vec::new(),
            checkpoints: CheckpointDir(ck_dir.clone()),
        };
        let status = match train(Arc::clone(&scenario), &resolved.train, seed, &mut log) {
            Ok((agent, _)) => {
                agent.checkpoint().save(&ck_dir.join("final.json"))?;
                SeedStatus::Completed
            }
            Err(failure) => {
                eprintln!("seed {seed} failed: {}", failure.error);
                SeedStatus::Failed(failure.error.to_string())
            }
        };
        manifest.status.insert(seed, status);
        rows.append(&mut log.rows);
        records.append(&mut log.records);
    }
    finish(&run.out, &manifest, &rows, &records)?;
    Ok(manifest)
}

fn episodes_command(
    run: &RunArgs,
    prepared: Prepared,
    mut episodes_for: impl FnMut(&Arc<Scenario>, u64, usize) -> Result<Vec<EpisodeLog>>,
) -> Result<RunManifest> {
    let Prepared { scenario, seeds, mut manifest, .. } = prepared;
    let (algo, count) = (manifest.algorithm, manifest.episodes);
    let (mut rows, mut records) = (Vec::new(), Vec::new());
    for &seed in &seeds {
        let status = match episodes_for(&scenario, seed, count) {
            Ok(logs) => {
                for (ep, log) in logs.iter().enumerate() {
                    let s = &log.summary;
                    println!("{algo} seed={seed} episode={ep} reward={:.3} f1={:.4} f2={:.4e} f3={:.1}", s.reward, s.f1, s.f2, s.f3);
                    rows.push(MetricsRow::from_log(algo, seed, ep, log));
                }
                records.extend(crate::export::records(logs.iter().enumerate().map(|(ep, l)| (seed, ep, l))));
                SeedStatus::Completed
            }
            Err(e) => {
                eprintln!("seed {seed} failed: {e:#}");
                SeedStatus::Failed(format!("{e:#}"))
            }
        };
        manifest.status.insert(seed, status);
    }
    finish(&run.out, &manifest, &rows, &records)?;
    Ok(manifest)
}

pub fn baseline_command(run: &RunArgs) -> Result<RunManifest> {
    let algo = run.algo.unwrap_or(Algo::Random);
    if algo == Algo::Qagob {
        bail!("baseline supports --algo random or greedy; use `train` or `eval` for qagob");
    }
    let prepared = prepare(run, "baseline", algo, None)?;
    episodes_command(run, prepared, |s, seed, n| run_baseline(s, algo, seed, n))
}

pub fn eval_command(run: &RunArgs, checkpoint: &Path) -> Result<RunManifest> {
    if run.algo.is_some_and(|a| a != Algo::Qagob) {
        bail!("eval runs a trained qagob agent; use `baseline` for other algorithms");
    }
    let prepared = prepare(run, "eval", Algo::Qagob, Some(checkpoint))?;
    let ck = Checkpoint::load(checkpoint)?;
    let agent = Agent::from_checkpoint(&ck, prepared.scenario.state_dim(), &prepared.resolved.train)?;
    episodes_command(run, prepared, |s, seed, n| run_agent(s, &agent, seed, n))
}

/// Mean of the last `min(10, len)` values.
pub fn final_mean(values: &[f64]) -> f64 {
    let k = values.len().min(10);
    values[values.len() - k..].iter().sum::<f64>() / k as f64
}

fn sweep_command(run: &RunArgs, param: SweepParam, values: Option<&str>) -> Result<bool> {
    let values: Vec<usize> = match values {
        Some(v) => v.split(',').map(|x| x.trim().parse().with_context(|| format!("bad sweep value `{x}`"))).collect::<Result<_>>()?,
        None => param.default_values(),
    };
    std::fs::create_dir_all(&run.out)?;
    let mut table = csv::Writer::from_path(run.out.join(SWEEP_FILE))?;
    table.write_record(["param", "value", "seed", "final_reward", "final_f1", "final_f2", "final_f3", "completed"])?;
    let mut ok = true;
    for v in values {
        let mut point = run.clone();
        point.out = run.out.join(format!("{}_{v}", param.key().trim_start_matches("train.")));
        point.overrides.push(format!("{}={v}", param.key()));
        let manifest = train_command(&point, "sweep")?;
        ok &= manifest.all_completed();
        let rows = read_metrics_summary(&point.out.join(METRICS_FILE))?;
        for &seed in &manifest.seeds {
            let mine: Vec<&[f64; 4]> = rows.iter().filter(|(s, _)| *s == seed).map(|(_, r)| r).collect();
            let col = |i: usize| final_mean(&mine.iter().map(|r| r[i]).collect::<Vec<_>>());
            let done = manifest.status.get(&seed) == Some(&SeedStatus::Completed);
            let cells = if mine.is_empty() { vec![String::new(); 4] } else { (0..4).map(|i| col(i).to_string()).collect() };
            let mut rec = vec![param.key().to_string(), v.to_string(), seed.to_string()];
            rec.extend(cells);
            rec.push(done.to_string());
            table.write_record(&rec)?;
        }
    }
    table.flush()?;
    Ok(ok)
}

/// `(seed, [reward, f1, f2, f3])` per metrics row.
fn read_metrics_summary(path: &Path) -> Result<Vec<(u64, [f64; 4])>> {
    let mut r = csv::Reader::from_path(path)?;
    let h = r.headers()?.clone();
    let idx = |name: &str| h.iter().position(|c| c == name).with_context(|| format!("metrics column {name} missing"));
    let (is, ir, i1, i2, i3) = (idx("seed")?, idx("reward")?, idx("f1")?, idx("f2")?, idx("f3")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec[i].parse::<f64>().with_context(|| format!("bad number `{}`", &rec[i]));
        out.push((rec[is].parse()?, [f(ir)?, f(i1)?, f(i2)?, f(i3)?]));
    }
    Ok(out)
}
