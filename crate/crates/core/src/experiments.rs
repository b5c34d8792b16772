//! Experiment orchestration: turns a resolved [`ExperimentSpec`] into a
//! directory of CSV tables and SVG charts.
//!
//! Every run writes the resolved config alongside its outputs and derives
//! all randomness from the spec's seed, so a run is reproducible from its
//! artifact directory alone. Wall-clock timings never reach the artifacts.

use std::path::PathBuf;

use thiserror::Error;

use crate::config::{ExperimentKind, ExperimentSpec};
use crate::env::{EnvConfig, EnvError, MamdpEnv};
use crate::game::{self, GameError, PriceCase};
use crate::latency;
use crate::ppo::baselines::{GreedyPricer, RandomPricer};
use crate::ppo::prune::PruneSchedule;
use crate::ppo::train::{run_episode, train, EpochMetrics, TrainConfig};
use crate::report::{emit_combined_chart, emit_plot_data, fmt_f64, write_csv, Series};
use crate::report::ReportError;
use crate::scenario::{generate_scenario, Scenario, ScenarioError};

/// Errors raised while running an experiment.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Env(#[from] EnvError),
    /// An equilibrium failed its own invariant re-check at write time;
    /// nothing was written.
    #[error("equilibrium failed re-validation before write: {0}")]
    CorruptEquilibrium(String),
    /// The spec's kind does not select this operation.
    #[error("experiment kind `{0}` does not match the requested operation")]
    WrongKind(&'static str),
}

impl ExperimentError {
    /// True when the root cause is a scenario whose stability floors cannot
    /// be met at any price (the CLI's dedicated exit code).
    pub fn is_infeasible(&self) -> bool {
        let game = match self {
            ExperimentError::Game(g) => g,
            ExperimentError::Env(EnvError::Game(g)) => g,
            _ => return false,
        };
        matches!(
            game,
            GameError::ScenarioInfeasible { .. }
                | GameError::InfeasibleAllocation { .. }
                | GameError::EmptyFeasibleRegion { .. }
        )
    }
}

/// What a finished experiment produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    /// Artifact files, in creation order.
    pub files: Vec<PathBuf>,
    /// Methods whose training diverged (the run still completed).
    pub diverged: Vec<String>,
}

/// Runs the experiment selected by `spec.kind`.
pub fn run(spec: &ExperimentSpec) -> Result<RunSummary, ExperimentError> {
    match spec.kind {
        ExperimentKind::EquilibriumSnapshot => run_equilibrium_snapshot(spec),
        ExperimentKind::TrainingRun => run_training(spec),
        ExperimentKind::UserSweep | ExperimentKind::UavSweep => run_scaling_sweep(spec),
        ExperimentKind::PruningEpochSweep => run_pruning_sweep(spec),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean reward of the last (up to) 20 epochs — the convergence figure all
/// method comparisons use.
pub fn final20(curve: &[f64]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    mean(&curve[curve.len().saturating_sub(20)..])
}

/// Writes the resolved spec next to the artifacts it produced.
fn write_config(spec: &ExperimentSpec, summary: &mut RunSummary) -> Result<(), ExperimentError> {
    let path = spec.out_dir.join("config.toml");
    std::fs::create_dir_all(&spec.out_dir).map_err(|source| ReportError::Io {
        path: spec.out_dir.clone(),
        source,
    })?;
    std::fs::write(&path, spec.to_toml()).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    summary.files.push(path);
    Ok(())
}

/// Solves one scenario's pricing game and dumps association and allocation
/// tables plus topology and allocation charts.
pub fn run_equilibrium_snapshot(spec: &ExperimentSpec) -> Result<RunSummary, ExperimentError> {
    let mut summary = RunSummary::default();
    write_config(spec, &mut summary)?;
    let scenario = generate_scenario(&spec.scenario, spec.seed)?;
    let eq = game::solve_equilibrium(&scenario)?;
    // Never serialize an inconsistent equilibrium: re-check every invariant
    // at the write boundary.
    eq.validate().map_err(ExperimentError::CorruptEquilibrium)?;

    let dir = &spec.out_dir;
    let mut association = Vec::with_capacity(eq.users.len());
    for user in &eq.users {
        let u = &scenario.users[user.user_idx];
        let v = &scenario.uavs[user.uav_idx];
        let distance = (u.position - v.position).norm();
        let snr = latency::snr(u, v, &scenario.channel).map_err(GameError::from)?;
        association.push(vec![
            user.user_idx.to_string(),
            user.uav_idx.to_string(),
            fmt_f64(distance),
            fmt_f64(snr),
        ]);
    }
    let assoc_path = dir.join("association.csv");
    write_csv(&assoc_path, &["user", "uav", "distance_m", "snr"], &association)?;
    summary.files.push(assoc_path);

    let allocation: Vec<Vec<String>> = eq
        .users
        .iter()
        .map(|user| {
            vec![
                user.user_idx.to_string(),
                user.uav_idx.to_string(),
                fmt_f64(user.price),
                fmt_f64(user.kappa_min),
                fmt_f64(user.demand),
                fmt_f64(user.demand - user.kappa_min),
                fmt_f64(user.follower_utility),
            ]
        })
        .collect();
    let alloc_path = dir.join("allocation.csv");
    write_csv(
        &alloc_path,
        &[
            "user",
            "uav",
            "price",
            "kappa_min_mhz",
            "kappa_star_mhz",
            "surplus_mhz",
            "follower_utility",
        ],
        &allocation,
    )?;
    summary.files.push(alloc_path);

    let uav_rows: Vec<Vec<String>> = eq
        .uavs
        .iter()
        .map(|uav| {
            let demand_total: f64 = eq
                .users
                .iter()
                .filter(|u| u.uav_idx == uav.uav_idx)
                .map(|u| u.demand)
                .sum();
            let saturated = uav.case == PriceCase::CapacityFloored
                || demand_total >= uav.aggregates.capacity - 1e-9;
            vec![
                uav.uav_idx.to_string(),
                fmt_f64(uav.price),
                uav.case.as_str().to_string(),
                uav.served.len().to_string(),
                fmt_f64(demand_total),
                fmt_f64(uav.aggregates.capacity),
                saturated.to_string(),
                fmt_f64(uav.leader_utility),
            ]
        })
        .collect();
    let uav_path = dir.join("uav_summary.csv");
    write_csv(
        &uav_path,
        &[
            "uav",
            "price",
            "price_case",
            "served_users",
            "demand_total_mhz",
            "capacity_mhz",
            "capacity_saturated",
            "leader_utility",
        ],
        &uav_rows,
    )?;
    summary.files.push(uav_path);

    let topology = [
        Series::scatter(
            "users",
            scenario
                .users
                .iter()
                .map(|u| (u.position.x, u.position.y))
                .collect(),
        ),
        Series::scatter(
            "uavs",
            scenario
                .uavs
                .iter()
                .map(|v| (v.position.x, v.position.y))
                .collect(),
        ),
    ];
    let topo_path = dir.join("topology.svg");
    emit_combined_chart(&topo_path, "deployment", "x (m)", "y (m)", &topology)?;
    summary.files.push(topo_path);

    let alloc_series = [
        Series::scatter(
            "stability floor",
            eq.users
                .iter()
                .map(|u| (u.user_idx as f64, u.kappa_min))
                .collect(),
        ),
        Series::scatter(
            "purchased",
            eq.users
                .iter()
                .map(|u| (u.user_idx as f64, u.demand))
                .collect(),
        ),
    ];
    let alloc_chart = dir.join("allocation.svg");
    emit_combined_chart(
        &alloc_chart,
        "bandwidth allocation",
        "user",
        "bandwidth (MHz)",
        &alloc_series,
    )?;
    summary.files.push(alloc_chart);
    Ok(summary)
}

/// A trained or evaluated method's per-epoch telemetry.
struct MethodCurve {
    name: &'static str,
    /// Mean reward per epoch (over agents and steps).
    curve: Vec<f64>,
    /// Full metrics for trained methods; baselines carry none.
    metrics: Option<Vec<EpochMetrics>>,
    diverged: bool,
}

/// Trains one config, keeping the stable prefix of the metrics if the run
/// diverges.
fn train_method(
    env: &mut MamdpEnv,
    config: &TrainConfig,
    seed: u64,
    name: &'static str,
) -> MethodCurve {
    match train(env, config, seed) {
        Ok(result) => MethodCurve {
            name,
            curve: result.metrics.iter().map(|m| m.mean_reward).collect(),
            metrics: Some(result.metrics),
            diverged: false,
        },
        Err(failure) => MethodCurve {
            name,
            curve: failure.metrics.iter().map(|m| m.mean_reward).collect(),
            metrics: Some(failure.metrics),
            diverged: true,
        },
    }
}

/// Evaluates a fixed (non-learning) pricing rule over the same episode seeds
/// the trainers saw.
fn evaluate_baseline(
    env: &mut MamdpEnv,
    epochs: usize,
    name: &'static str,
    mut act: impl FnMut(usize, &crate::env::Observation) -> f64,
) -> Result<MethodCurve, ExperimentError> {
    let env_seed = env.config().seed;
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let per_agent = run_episode(env, env_seed.wrapping_add(epoch as u64), &mut act)?;
        curve.push(mean(&per_agent));
    }
    Ok(MethodCurve {
        name,
        curve,
        metrics: None,
        diverged: false,
    })
}

fn training_env(
    scenario: &Scenario,
    train_cfg: &TrainConfig,
) -> Result<MamdpEnv, ExperimentError> {
    let mut env_cfg = EnvConfig::for_scenario(scenario);
    env_cfg.episode_len = train_cfg.steps_per_epoch;
    Ok(MamdpEnv::new(scenario.clone(), env_cfg)?)
}

/// Trains pruned and dense policies and evaluates greedy/random baselines on
/// identical episode seeds; emits reward curves, strategy traces, the
/// density schedule, and a method comparison table.
pub fn run_training(spec: &ExperimentSpec) -> Result<RunSummary, ExperimentError> {
    let mut summary = RunSummary::default();
    write_config(spec, &mut summary)?;
    let scenario = generate_scenario(&spec.scenario, spec.seed)?;
    let mut env = training_env(&scenario, &spec.train)?;
    let optimum = env.known_optimum()?;
    let opt_mean = mean(&optimum.rewards);

    let mut pruned_cfg = spec.train.clone();
    pruned_cfg.prune = Some(spec.train.prune.unwrap_or_default());
    let mut dense_cfg = spec.train.clone();
    dense_cfg.prune = None;

    let pruned = train_method(&mut env, &pruned_cfg, spec.seed, "pruned-ppo");
    let dense = train_method(&mut env, &dense_cfg, spec.seed, "dense-ppo");

    let greedy_rules: Vec<GreedyPricer> = scenario
        .uavs
        .iter()
        .map(|u| GreedyPricer::new(u.unit_cost, scenario.price_floor, scenario.price_ceiling))
        .collect();
    let greedy = evaluate_baseline(&mut env, spec.train.epochs, "greedy", |n, obs| {
        greedy_rules[n].act(obs)
    })?;
    let mut random_rules: Vec<RandomPricer> = (0..scenario.uavs.len())
        .map(|n| {
            RandomPricer::new(
                spec.seed.wrapping_add(n as u64),
                scenario.price_floor,
                scenario.price_ceiling,
            )
        })
        .collect();
    let random = evaluate_baseline(&mut env, spec.train.epochs, "random", |n, _| {
        random_rules[n].act()
    })?;

    let methods = [pruned, dense, greedy, random];
    let dir = &spec.out_dir;

    let reward_series: Vec<Series> = methods
        .iter()
        .map(|m| {
            Series::line(
                m.name,
                m.curve
                    .iter()
                    .enumerate()
                    .map(|(e, &r)| (e as f64, r))
                    .collect(),
            )
        })
        .collect();
    summary
        .files
        .extend(emit_plot_data(dir, "reward", "epoch", "mean reward", &reward_series)?);
    let combined = dir.join("reward-all.svg");
    emit_combined_chart(&combined, "reward curves", "epoch", "mean reward", &reward_series)?;
    summary.files.push(combined);

    let mut trace_rows = Vec::new();
    let mut price_series = Vec::new();
    for method in &methods {
        let Some(metrics) = &method.metrics else {
            continue;
        };
        for m in metrics {
            for (agent, (&price, &demand)) in m
                .agent_mean_prices
                .iter()
                .zip(&m.agent_mean_demands)
                .enumerate()
            {
                trace_rows.push(vec![
                    m.epoch.to_string(),
                    method.name.to_string(),
                    agent.to_string(),
                    fmt_f64(price),
                    fmt_f64(demand),
                ]);
            }
        }
        for agent in 0..scenario.uavs.len() {
            price_series.push(Series::line(
                format!("{} uav {agent}", method.name),
                metrics
                    .iter()
                    .map(|m| (m.epoch as f64, m.agent_mean_prices[agent]))
                    .collect(),
            ));
        }
    }
    let trace_path = dir.join("strategy_trace.csv");
    write_csv(
        &trace_path,
        &["epoch", "method", "agent", "mean_price", "mean_demand"],
        &trace_rows,
    )?;
    summary.files.push(trace_path);
    let price_chart = dir.join("strategy-prices.svg");
    emit_combined_chart(&price_chart, "posted prices", "epoch", "mean price", &price_series)?;
    summary.files.push(price_chart);

    let pruned_metrics = methods[0].metrics.as_deref().unwrap_or(&[]);
    let density_rows: Vec<Vec<String>> = pruned_metrics
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                fmt_f64(m.density),
                m.pruned.to_string(),
                m.collapse_skipped.to_string(),
            ]
        })
        .collect();
    let density_path = dir.join("density.csv");
    write_csv(
        &density_path,
        &["epoch", "density", "pruning_event", "collapse_skipped"],
        &density_rows,
    )?;
    summary.files.push(density_path);
    let density_chart = dir.join("density.svg");
    emit_combined_chart(
        &density_chart,
        "hidden-neuron density",
        "epoch",
        "density",
        &[Series::line(
            "density",
            pruned_metrics
                .iter()
                .map(|m| (m.epoch as f64, m.density))
                .collect(),
        )],
    )?;
    summary.files.push(density_chart);

    let mut method_rows: Vec<Vec<String>> = methods
        .iter()
        .map(|m| {
            let f20 = final20(&m.curve);
            vec![
                m.name.to_string(),
                fmt_f64(f20),
                fmt_f64(if opt_mean > 0.0 { f20 / opt_mean } else { f64::NAN }),
                m.diverged.to_string(),
            ]
        })
        .collect();
    method_rows.push(vec![
        "known-optimum".to_string(),
        fmt_f64(opt_mean),
        fmt_f64(1.0),
        false.to_string(),
    ]);
    let summary_path = dir.join("summary.csv");
    write_csv(
        &summary_path,
        &[
            "method",
            "final20_mean_reward",
            "fraction_of_known_optimum",
            "diverged",
        ],
        &method_rows,
    )?;
    summary.files.push(summary_path);

    summary.diverged = methods
        .iter()
        .filter(|m| m.diverged)
        .map(|m| m.name.to_string())
        .collect();
    Ok(summary)
}

/// Per-UAV mean equilibrium reward (env reward units) of one scenario.
fn equilibrium_reward(scenario: &Scenario) -> Result<(f64, f64), ExperimentError> {
    let eq = game::solve_equilibrium(scenario)?;
    eq.validate().map_err(ExperimentError::CorruptEquilibrium)?;
    let utilities: Vec<f64> = eq.uavs.iter().map(|u| u.leader_utility).collect();
    let mean_utility = mean(&utilities);
    let reward_scale = EnvConfig::for_scenario(scenario).reward_scale;
    Ok((reward_scale * mean_utility, mean_utility))
}

/// Sweeps the user population (fixed fleet) or the fleet size (fixed user
/// population), averaging equilibrium rewards over several seeds per point.
pub fn run_scaling_sweep(spec: &ExperimentSpec) -> Result<RunSummary, ExperimentError> {
    let (axis, counts, fixed): (&str, &[usize], usize) = match spec.kind {
        ExperimentKind::UserSweep => (
            "n_users",
            &spec.sweep.user_counts,
            spec.sweep.uavs_during_user_sweep,
        ),
        ExperimentKind::UavSweep => (
            "n_uavs",
            &spec.sweep.uav_counts,
            spec.sweep.users_during_uav_sweep,
        ),
        _ => return Err(ExperimentError::WrongKind(spec.kind.as_str())),
    };
    let mut summary = RunSummary::default();
    write_config(spec, &mut summary)?;

    let mut rows = Vec::new();
    let mut mean_points = Vec::new();
    let mut learned_points = Vec::new();
    for &count in counts {
        let mut scenario_cfg = spec.scenario.clone();
        match spec.kind {
            ExperimentKind::UserSweep => {
                scenario_cfg.n_users = count;
                scenario_cfg.n_uavs = fixed;
            }
            _ => {
                scenario_cfg.n_uavs = count;
                scenario_cfg.n_users = fixed;
            }
        }
        let mut rewards = Vec::with_capacity(spec.sweep.seeds_per_point);
        for s in 0..spec.sweep.seeds_per_point {
            let seed = spec.seed.wrapping_add(s as u64);
            let scenario = generate_scenario(&scenario_cfg, seed)?;
            let (reward, utility) = equilibrium_reward(&scenario)?;
            rows.push(vec![
                count.to_string(),
                seed.to_string(),
                fmt_f64(reward),
                fmt_f64(utility),
            ]);
            rewards.push(reward);
        }
        let point_mean = mean(&rewards);
        let variance = mean(
            &rewards
                .iter()
                .map(|r| (r - point_mean).powi(2))
                .collect::<Vec<_>>(),
        );
        mean_points.push((count as f64, point_mean, variance.sqrt()));

        if spec.sweep.include_learned {
            let scenario = generate_scenario(&scenario_cfg, spec.seed)?;
            let mut env = training_env(&scenario, &spec.train)?;
            let method = train_method(&mut env, &spec.train, spec.seed, "learned");
            if method.diverged {
                summary.diverged.push(format!("learned@{axis}={count}"));
            }
            learned_points.push((count as f64, final20(&method.curve)));
        }
    }

    let dir = &spec.out_dir;
    let sweep_path = dir.join("sweep.csv");
    write_csv(
        &sweep_path,
        &[axis, "seed", "mean_uav_reward", "mean_leader_utility"],
        &rows,
    )?;
    summary.files.push(sweep_path);

    let summary_rows: Vec<Vec<String>> = mean_points
        .iter()
        .map(|&(count, m, sd)| vec![(count as usize).to_string(), fmt_f64(m), fmt_f64(sd)])
        .collect();
    let summary_path = dir.join("sweep_summary.csv");
    write_csv(
        &summary_path,
        &[axis, "mean_uav_reward", "std_uav_reward"],
        &summary_rows,
    )?;
    summary.files.push(summary_path);

    let mut series = vec![Series::line(
        "equilibrium reward",
        mean_points.iter().map(|&(c, m, _)| (c, m)).collect(),
    )];
    if spec.sweep.include_learned {
        series.push(Series::line("learned reward", learned_points));
    }
    let chart = dir.join("sweep.svg");
    emit_combined_chart(&chart, "scaling sweep", axis, "mean UAV reward", &series)?;
    summary.files.push(chart);
    Ok(summary)
}

/// Trains the pruned policy once per configured pruning start epoch and
/// emits per-start-epoch reward and density curves.
pub fn run_pruning_sweep(spec: &ExperimentSpec) -> Result<RunSummary, ExperimentError> {
    let mut summary = RunSummary::default();
    write_config(spec, &mut summary)?;
    let scenario = generate_scenario(&spec.scenario, spec.seed)?;
    let mut env = training_env(&scenario, &spec.train)?;
    let base = spec.train.prune.unwrap_or_default();

    let mut reward_series = Vec::new();
    let mut density_series = Vec::new();
    let mut rows = Vec::new();
    for &t0 in &spec.sweep.prune_start_epochs {
        let mut cfg = spec.train.clone();
        cfg.prune = Some(PruneSchedule {
            start_epoch: t0,
            ..base
        });
        let method = train_method(&mut env, &cfg, spec.seed, "pruned-ppo");
        let metrics = method.metrics.as_deref().unwrap_or(&[]);
        let name = format!("t0={t0}");
        reward_series.push(Series::line(
            name.clone(),
            method
                .curve
                .iter()
                .enumerate()
                .map(|(e, &r)| (e as f64, r))
                .collect(),
        ));
        density_series.push(Series::line(
            name.clone(),
            metrics
                .iter()
                .map(|m| (m.epoch as f64, m.density))
                .collect(),
        ));
        if method.diverged {
            summary.diverged.push(name.clone());
        }
        rows.push(vec![
            t0.to_string(),
            fmt_f64(final20(&method.curve)),
            fmt_f64(metrics.last().map_or(1.0, |m| m.density)),
            method.diverged.to_string(),
        ]);
    }

    let dir = &spec.out_dir;
    summary.files.extend(emit_plot_data(
        dir,
        "reward-by-start-epoch",
        "epoch",
        "mean reward",
        &reward_series,
    )?);
    let combined = dir.join("reward-by-start-epoch-all.svg");
    emit_combined_chart(
        &combined,
        "pruning start epoch sweep",
        "epoch",
        "mean reward",
        &reward_series,
    )?;
    summary.files.push(combined);
    let density_chart = dir.join("density-by-start-epoch.svg");
    emit_combined_chart(
        &density_chart,
        "density schedules",
        "epoch",
        "density",
        &density_series,
    )?;
    summary.files.push(density_chart);
    let summary_path = dir.join("summary.csv");
    write_csv(
        &summary_path,
        &[
            "start_epoch",
            "final20_mean_reward",
            "final_density",
            "diverged",
        ],
        &rows,
    )?;
    summary.files.push(summary_path);
    Ok(summary)
}
