//! Declarative experiment configuration: a human-editable TOML schema with
//! defaults for every field, strict unknown-key rejection, and environment
//! variable overrides.
//!
//! Layering, lowest to highest precedence: built-in defaults → config file →
//! `SKYMARKET_*` environment variables → command-line flags. An empty (or
//! absent) file therefore resolves to the default experiment.
//!
//! Environment overrides map 1:1 onto config fields: the variable name is the
//! field path with `__` separating nesting levels, e.g.
//! `SKYMARKET_SCENARIO__N_USERS=8` or `SKYMARKET_TRAIN__GAMMA=0.9`. Values
//! are parsed as TOML (so arrays like `[15e6, 25e6]` and inline tables
//! work); anything that is not valid TOML is taken as a bare string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ppo::train::TrainConfig;
use crate::scenario::ScenarioConfig;

/// Prefix selecting the environment variables that override config fields.
pub const ENV_PREFIX: &str = "SKYMARKET_";

/// Errors raised while loading or validating a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    /// The config file could not be read.
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// The config file is not valid TOML or violates the schema; the message
    /// carries the line/column and an excerpt from the TOML parser.
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    /// The merged config became invalid only after environment overrides
    /// were applied; the message names the offending key.
    #[error(
        "invalid configuration after applying environment overrides [{}]: {message}",
        .vars.join(", ")
    )]
    EnvOverride { vars: Vec<String>, message: String },
    /// Field-level contract violations, all of them.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    /// The config file pins a different experiment kind than the invoked
    /// command.
    #[error("config file sets kind `{file}` but the `{requested}` command was invoked")]
    KindMismatch {
        file: &'static str,
        requested: &'static str,
    },
}

/// The experiment families the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Solve one scenario's pricing game and dump association/allocation
    /// tables.
    EquilibriumSnapshot,
    /// Train pruned and dense policies against greedy/random baselines.
    TrainingRun,
    /// Equilibrium rewards over a growing user population at fixed fleet
    /// size.
    UserSweep,
    /// Equilibrium rewards over a growing fleet at fixed user population.
    UavSweep,
    /// Pruned training runs over a set of pruning start epochs.
    PruningEpochSweep,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::EquilibriumSnapshot => "equilibrium-snapshot",
            ExperimentKind::TrainingRun => "training-run",
            ExperimentKind::UserSweep => "user-sweep",
            ExperimentKind::UavSweep => "uav-sweep",
            ExperimentKind::PruningEpochSweep => "pruning-epoch-sweep",
        }
    }
}

/// Axis definitions for the sweep experiment kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// User counts visited by `user-sweep`.
    pub user_counts: Vec<usize>,
    /// Fleet size held fixed during `user-sweep`.
    pub uavs_during_user_sweep: usize,
    /// Fleet sizes visited by `uav-sweep`.
    pub uav_counts: Vec<usize>,
    /// User count held fixed during `uav-sweep`.
    pub users_during_uav_sweep: usize,
    /// Scenario seeds averaged per sweep point (seed, seed+1, …).
    pub seeds_per_point: usize,
    /// Pruning start epochs visited by `pruning-epoch-sweep`.
    pub prune_start_epochs: Vec<usize>,
    /// Also train a policy at every scaling-sweep point (slow) instead of
    /// reporting equilibrium rewards only.
    pub include_learned: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            user_counts: vec![5, 10, 15, 20],
            uavs_during_user_sweep: 3,
            uav_counts: vec![3, 6, 9, 12],
            users_during_uav_sweep: 15,
            seeds_per_point: 20,
            prune_start_epochs: vec![50, 200, 300],
            include_learned: false,
        }
    }
}

impl SweepConfig {
    fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, counts) in [
            ("sweep.user_counts", &self.user_counts),
            ("sweep.uav_counts", &self.uav_counts),
            ("sweep.prune_start_epochs", &self.prune_start_epochs),
        ] {
            if counts.is_empty() {
                errs.push(format!("{name} must not be empty"));
            }
        }
        if self.user_counts.iter().any(|&c| c == 0) {
            errs.push("sweep.user_counts entries must be at least 1".to_string());
        }
        if self.uav_counts.iter().any(|&c| c == 0) {
            errs.push("sweep.uav_counts entries must be at least 1".to_string());
        }
        if self.uavs_during_user_sweep == 0 {
            errs.push("sweep.uavs_during_user_sweep must be at least 1".to_string());
        }
        if self.users_during_uav_sweep == 0 {
            errs.push("sweep.users_during_uav_sweep must be at least 1".to_string());
        }
        if self.seeds_per_point == 0 {
            errs.push("sweep.seeds_per_point must be at least 1".to_string());
        }
        errs
    }
}

/// A fully resolved experiment: what to run, on which scenario family, with
/// which training hyperparameters, and where to write artifacts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Master seed for scenario generation and training.
    pub seed: u64,
    /// Directory receiving all emitted artifact files.
    pub out_dir: PathBuf,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            kind: ExperimentKind::TrainingRun,
            seed: 0,
            out_dir: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentSpec {
    /// Returns every contract violation across all sections (empty when
    /// valid), so one failed load reports all problems at once.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for v in self.scenario.violations() {
            errs.push(format!("scenario.{v}"));
        }
        if let Err(e) = self.train.validate() {
            errs.push(format!("train: {e}"));
        }
        errs.extend(self.sweep.violations());
        if self.out_dir.as_os_str().is_empty() {
            errs.push("out_dir must not be empty".to_string());
        }
        errs
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// Renders the resolved spec back as TOML (the `validate-config`
    /// output).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes to TOML")
    }
}

/// Command-line overrides layered on top of file and environment values.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    /// The invoked subcommand's experiment kind; conflicts with an explicit
    /// file value are an error rather than silently resolved.
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// File-shaped spec: every field optional so absence falls back a layer.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSpec {
    kind: Option<ExperimentKind>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    scenario: ScenarioConfig,
    train: TrainConfig,
    sweep: SweepConfig,
}

/// Loads, merges, and validates a configuration from an optional file, the
/// process environment, and command-line flags.
pub fn resolve(path: Option<&Path>, cli: &CliOverrides) -> Result<ExperimentSpec, ConfigError> {
    let mut vars: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    // Process environments are unordered; sort so merging is deterministic.
    vars.sort();
    resolve_with_vars(path, cli, &vars)
}

/// [`resolve`] with the environment passed explicitly (tests inject
/// overrides here without mutating the process environment).
pub fn resolve_with_vars(
    path: Option<&Path>,
    cli: &CliOverrides,
    vars: &[(String, String)],
) -> Result<ExperimentSpec, ConfigError> {
    let (text, display_path) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            p.to_path_buf(),
        ),
        None => (String::new(), PathBuf::from("<defaults>")),
    };

    // Validate the file alone first: serde errors at this stage carry the
    // TOML line/column of the offending key or value.
    let file_raw: RawSpec = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: display_path.clone(),
        message: e.to_string(),
    })?;

    let raw = if vars.is_empty() {
        file_raw
    } else {
        let mut table: toml::Table = toml::from_str(&text).expect("file validated above");
        let applied = apply_env_overrides(&mut table, vars)?;
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::EnvOverride {
                vars: applied,
                message: e.message().to_string(),
            })?
    };

    if let (Some(file), Some(requested)) = (raw.kind, cli.kind) {
        if file != requested {
            return Err(ConfigError::KindMismatch {
                file: file.as_str(),
                requested: requested.as_str(),
            });
        }
    }

    let spec = ExperimentSpec {
        kind: cli
            .kind
            .or(raw.kind)
            .unwrap_or(ExperimentKind::TrainingRun),
        seed: cli.seed.or(raw.seed).unwrap_or(0),
        out_dir: cli
            .out_dir
            .clone()
            .or(raw.out_dir)
            .unwrap_or_else(|| PathBuf::from("out")),
        scenario: raw.scenario,
        train: raw.train,
        sweep: raw.sweep,
    };
    spec.validate()?;
    Ok(spec)
}

/// Loads a configuration file with defaults and environment overrides
/// applied, without command-line flags.
pub fn load_config(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    resolve(Some(path), &CliOverrides::default())
}

/// Merges `SKYMARKET_*` variables into the parsed file table. Returns the
/// names of the variables applied, for error reporting.
fn apply_env_overrides(
    table: &mut toml::Table,
    vars: &[(String, String)],
) -> Result<Vec<String>, ConfigError> {
    let mut applied = Vec::new();
    for (key, raw_value) in vars {
        let Some(field_path) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let segments: Vec<String> = field_path
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if segments.iter().any(String::is_empty) {
            return Err(ConfigError::EnvOverride {
                vars: vec![key.clone()],
                message: "variable name has an empty field-path segment".to_string(),
            });
        }
        insert_at_path(table, &segments, parse_env_value(raw_value)).map_err(|message| {
            ConfigError::EnvOverride {
                vars: vec![key.clone()],
                message,
            }
        })?;
        applied.push(key.clone());
    }
    Ok(applied)
}

/// Parses an override value as TOML; bare text (e.g. `training-run`) falls
/// back to a plain string.
fn parse_env_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed assignment has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn insert_at_path(
    table: &mut toml::Table,
    segments: &[String],
    value: toml::Value,
) -> Result<(), String> {
    let (leaf, parents) = segments.split_last().expect("segments nonempty");
    let mut current = table;
    for seg in parents {
        current = current
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{seg}` holds a value, not a section"))?;
    }
    current.insert(leaf.clone(), value);
    Ok(())
}
