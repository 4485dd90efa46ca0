//! Run configuration: one TOML file holds the scenario plus an optional
//! `[train]` table; `--override` keys starting with `train.` target the
//! trainer, every other key targets the scenario.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sagin_core::scenario::{parse_override, Scenario, SEED_ENV_VAR};
use sagin_core::OptimizationMode;
use sagin_learn::TrainConfig;

use crate::runner::Algo;

const TRAIN_TABLE: &str = "train";

/// Base hyperparameter set that the `[train]` table and `train.*`
/// overrides are layered onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-size networks and batches.
    Full,
    /// Small networks sized for one CPU core.
    #[default]
    Desk,
}

impl Profile {
    pub fn base(self) -> TrainConfig {
        match self {
            Profile::Full => TrainConfig::default(),
            Profile::Desk => TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub scenario: Scenario,
    pub train: TrainConfig,
}

/// Splits `key=value` flags into scenario and trainer overrides.
pub fn split_overrides(raw: &[String]) -> Result<(Vec<(String, String)>, Vec<(String, String)>)> {
    let mut scenario = Vec::new();
    let mut train = Vec::new();
    for r in raw {
        let (k, v) = parse_override(r)?;
        match k.strip_prefix("train.") {
            Some(rest) => train.push((rest.to_string(), v)),
            None => scenario.push((k, v)),
        }
    }
    Ok((scenario, train))
}

/// Reads the config file (or starts from defaults), applies overrides,
/// the mode flag and the seed environment variable.
pub fn resolve(
    path: Option<&Path>,
    overrides: &[String],
    mode: Option<OptimizationMode>,
    profile: Profile,
) -> Result<ResolvedConfig> {
    let mut doc: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse().with_context(|| format!("parsing {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    let train_table = match doc.remove(TRAIN_TABLE) {
        Some(toml::Value::Table(t)) => t,
        Some(_) => bail!("`{TRAIN_TABLE}` must be a table"),
        None => toml::Table::new(),
    };
    let (mut scenario_ov, train_ov) = split_overrides(overrides)?;
    if let Some(m) = mode {
        scenario_ov.push(("reward.mode".into(), format!("\"{m}\"")));
    }
    if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
        let seed: u64 = seed.trim().parse().with_context(|| format!("{SEED_ENV_VAR}={seed} is not an integer"))?;
        scenario_ov.push(("seed".into(), seed.to_string()));
    }
    let scenario = Scenario::from_toml_str(&toml::to_string(&doc)?, &scenario_ov)?;
    let train = train_config(profile, train_table, &train_ov)?;
    Ok(ResolvedConfig { scenario, train })
}

fn train_config(profile: Profile, table: toml::Table, overrides: &[(String, String)]) -> Result<TrainConfig> {
    let mut merged = toml::Table::try_from(profile.base())?;
    merged.extend(table);
    let mut text = toml::to_string(&merged)?;
    for (k, v) in overrides {
        // Reparsing the whole document keeps override values typed the
        // same way as file values.
        let mut doc: toml::Table = text.parse()?;
        let value: toml::Value = format!("v = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(v.clone()));
        insert_dotted(&mut doc, k, value)?;
        text = toml::to_string(&doc)?;
    }
    let cfg: TrainConfig = toml::from_str(&text).context("train config")?;
    cfg.validate()?;
    Ok(cfg)
}

fn insert_dotted(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|s| !s.is_empty()).context("empty override key")?;
    let mut table = doc;
    for part in parts {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override `train.{key}`: `{part}` is not a table"))?;
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// Parses `N[,N...]`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| p.trim().parse::<u64>().with_context(|| format!("bad seed `{p}`")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    Ok(seeds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Completed,
    Failed(String),
}

/// Everything needed to repeat a run, written beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub verb: String,
    pub scenario_path: Option<PathBuf>,
    pub algorithm: Algo,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub mode: OptimizationMode,
    pub overrides: BTreeMap<String, String>,
    pub episodes: usize,
    pub profile: Profile,
    pub checkpoint: Option<PathBuf>,
    pub status: BTreeMap<u64, SeedStatus>,
}

impl RunManifest {
    pub fn all_completed(&self) -> bool {
        self.seeds.iter().all(|s| self.status.get(s) == Some(&SeedStatus::Completed))
    }
}
