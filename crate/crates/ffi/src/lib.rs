//! C ABI over the scenario → stability → equilibrium → training pipeline.
//!
//! Conventions:
//! - Fallible functions return a [`SkyStatus`]; out-parameters are written
//!   only on [`SkyStatus::Ok`] (plus the documented partial fill on
//!   [`SkyStatus::Diverged`]).
//! - Handles are opaque. Free them with the matching `*_free` function,
//!   exactly once; `*_free(NULL)` is a no-op. Any other null argument
//!   yields [`SkyStatus::NullPointer`].
//! - Every failure stores a human-readable message retrievable with
//!   [`sky_last_error_message`]. The message is thread-local: read it on
//!   the thread that observed the failure.
//! - Panics never cross the boundary: they are caught, recorded, and
//!   reported as [`SkyStatus::Panic`].
//! - Handles are plain data and may be moved between threads, but are not
//!   synchronized; guard concurrent use of one handle externally.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, UnwindSafe};

use skymarket::env::{EnvConfig, EnvError, MamdpEnv};
use skymarket::game::{solve_equilibrium, Equilibrium, GameError, PriceCase};
use skymarket::ppo::prune::PruneSchedule;
use skymarket::ppo::train::{train, TrainConfig};
use skymarket::ppo::PpoError;
use skymarket::scenario::{generate_scenario, Scenario, ScenarioConfig, ScenarioError};
use skymarket::stability::stability_pipeline;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkyStatus {
    /// The call succeeded and all out-parameters are valid.
    Ok = 0,
    /// An unexpected internal failure; see `sky_last_error_message`.
    Internal = 1,
    /// An argument violates its documented contract.
    InvalidArgument = 2,
    /// The scenario admits no stable bandwidth allocation.
    Infeasible = 3,
    /// Training diverged; stats hold the stable prefix of the run.
    Diverged = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

/// Which constraint binds a UAV's posted equilibrium price.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkyPriceCase {
    /// The unconstrained profit maximizer is feasible.
    Interior = 0,
    /// Capped from above so every user still affords its stability floor.
    StabilityCapped = 1,
    /// Floored from below so aggregate demand fits sellable capacity.
    CapacityFloored = 2,
}

/// Equilibrium outcome of one UAV (bandwidth in MHz).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyUavOutcome {
    /// Posted price per MHz.
    pub price: f64,
    /// Profit at the equilibrium allocation.
    pub leader_utility: f64,
    /// Sellable capacity, MHz.
    pub capacity_mhz: f64,
    /// Total bandwidth sold, MHz.
    pub demand_mhz: f64,
    /// Number of served users.
    pub served_users: usize,
    /// Binding constraint of the posted price.
    pub price_case: SkyPriceCase,
}

/// Equilibrium outcome of one user (bandwidth in MHz).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyUserOutcome {
    /// Index of the serving UAV.
    pub serving_uav: usize,
    /// Purchased bandwidth, MHz.
    pub demand_mhz: f64,
    /// Stability floor, MHz.
    pub kappa_min_mhz: f64,
    /// Price paid per MHz.
    pub price: f64,
    /// Utility at the purchased bandwidth.
    pub follower_utility: f64,
    /// On-time delivery probability the floor was derived from.
    pub delivery_probability: f64,
}

/// Stability verdict of one user–UAV pair.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyStabilityReport {
    /// Required on-time delivery probability at the pair's initial state.
    pub delivery_probability: f64,
    /// Time left for communication each period, seconds.
    pub latency_budget_s: f64,
    /// Smallest bandwidth meeting the budget, Hz; 0 when infeasible.
    pub min_bandwidth_hz: f64,
    /// Whether any bandwidth satisfies the budget.
    pub feasible: bool,
}

/// Knobs of a training run. Non-positive learning rates select the
/// defaults (1e-3).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyTrainParams {
    /// Training epochs (one environment episode each); must be ≥ 1.
    pub epochs: usize,
    /// Steps per episode; must be ≥ 1.
    pub steps_per_epoch: usize,
    /// Seed for network initialization and exploration noise.
    pub seed: u64,
    /// Train with the structured-pruning schedule instead of dense.
    pub prune: bool,
    /// Actor learning rate; ≤ 0 selects the default.
    pub actor_lr: f64,
    /// Critic learning rate; ≤ 0 selects the default.
    pub critic_lr: f64,
}

/// Summary of a training run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkyTrainStats {
    /// Mean per-step reward over the final 20 epochs (or all, if fewer).
    pub final_mean_reward: f64,
    /// `final_mean_reward` relative to the equilibrium reward ceiling.
    pub fraction_of_optimum: f64,
    /// Mean hidden-neuron density of the trained networks.
    pub final_density: f64,
    /// Epochs actually completed (shorter than requested on divergence).
    pub epochs_run: usize,
}

/// Opaque generated scenario: geometry, channel, loop model, market ranges.
pub struct SkyScenario {
    inner: Scenario,
}

/// Opaque solved market equilibrium.
pub struct SkyEquilibrium {
    inner: Equilibrium,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: impl Into<String>) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message.into());
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().clear());
}

/// Runs a boundary body, converting panics into [`SkyStatus::Panic`].
fn guarded(body: impl FnOnce() -> SkyStatus + UnwindSafe) -> SkyStatus {
    clear_error();
    match catch_unwind(body) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic payload".to_string());
            set_error(format!("caught panic: {message}"));
            SkyStatus::Panic
        }
    }
}

fn fail(status: SkyStatus, message: impl Into<String>) -> SkyStatus {
    set_error(message);
    status
}

/// The three market errors that mean "this scenario cannot be stabilized",
/// as opposed to misuse or an internal defect.
fn game_status(error: &GameError) -> SkyStatus {
    match error {
        GameError::ScenarioInfeasible { .. }
        | GameError::InfeasibleAllocation { .. }
        | GameError::EmptyFeasibleRegion { .. } => SkyStatus::Infeasible,
        _ => SkyStatus::Internal,
    }
}

fn env_status(error: &EnvError) -> SkyStatus {
    match error {
        EnvError::Game(game) => game_status(game),
        _ => SkyStatus::InvalidArgument,
    }
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sky_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap − 1` bytes) and returns the full message length in
/// bytes, excluding the NUL. Returns 0 when the last call succeeded. `buf`
/// may be null to query the length alone.
///
/// # Safety
///
/// When `buf` is non-null it must point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sky_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        if !buf.is_null() && cap > 0 {
            let n = message.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(message.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        message.len()
    })
}

/// Generates a scenario with `n_uavs` UAVs and `n_users` users. All other
/// parameters take their documented defaults, except the per-UAV sellable
/// bandwidth, which is pinned to `bandwidth_hz` when positive (pass a
/// non-positive value to keep the default range). On success `*out` owns
/// the scenario; release it with [`sky_scenario_free`].
///
/// # Safety
///
/// `out` must be a valid pointer to a `*mut SkyScenario` slot.
#[no_mangle]
pub unsafe extern "C" fn sky_scenario_new(
    n_uavs: usize,
    n_users: usize,
    bandwidth_hz: f64,
    seed: u64,
    out: *mut *mut SkyScenario,
) -> SkyStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SkyStatus::NullPointer, "out pointer is null");
        }
        let mut config = ScenarioConfig {
            n_uavs,
            n_users,
            ..ScenarioConfig::default()
        };
        if bandwidth_hz > 0.0 {
            config.bandwidth_total_hz = [bandwidth_hz, bandwidth_hz];
        }
        let violations = config.violations();
        if !violations.is_empty() {
            return fail(SkyStatus::InvalidArgument, violations.join("; "));
        }
        match generate_scenario(&config, seed) {
            Ok(scenario) => {
                *out = Box::into_raw(Box::new(SkyScenario { inner: scenario }));
                SkyStatus::Ok
            }
            Err(e @ ScenarioError::InvalidConfig(_)) => fail(SkyStatus::InvalidArgument, e.to_string()),
            Err(e) => fail(SkyStatus::Internal, e.to_string()),
        }
    })
}

/// Releases a scenario. Null is a no-op.
///
/// # Safety
///
/// `scenario` must be null or a pointer obtained from [`sky_scenario_new`]
/// that has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn sky_scenario_free(scenario: *mut SkyScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Length of a scenario digest, including the trailing NUL.
pub const SKY_DIGEST_CAP: usize = 65;

/// Writes the scenario's hex digest (64 characters plus NUL) into `buf`.
/// Equal digests mean byte-identical downstream behavior.
///
/// # Safety
///
/// `scenario` must be a live scenario handle and `buf` must point to at
/// least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sky_scenario_digest(
    scenario: *const SkyScenario,
    buf: *mut c_char,
    cap: usize,
) -> SkyStatus {
    guarded(|| {
        if scenario.is_null() || buf.is_null() {
            return fail(SkyStatus::NullPointer, "scenario or buffer is null");
        }
        let digest = (*scenario).inner.digest();
        if cap < digest.len() + 1 {
            return fail(
                SkyStatus::InvalidArgument,
                format!("digest needs {} bytes, got {cap}", digest.len() + 1),
            );
        }
        std::ptr::copy_nonoverlapping(digest.as_ptr(), buf as *mut u8, digest.len());
        *buf.add(digest.len()) = 0;
        SkyStatus::Ok
    })
}

/// Number of UAVs in a scenario; 0 for a null handle.
///
/// # Safety
///
/// `scenario` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn sky_scenario_n_uavs(scenario: *const SkyScenario) -> usize {
    if scenario.is_null() {
        return 0;
    }
    (*scenario).inner.uavs.len()
}

/// Number of users in a scenario; 0 for a null handle.
///
/// # Safety
///
/// `scenario` must be null or a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn sky_scenario_n_users(scenario: *const SkyScenario) -> usize {
    if scenario.is_null() {
        return 0;
    }
    (*scenario).inner.users.len()
}

/// Runs the stability pipeline for one user–UAV pair at the pair's initial
/// tracking state: required delivery probability, latency budget, and the
/// bandwidth floor. An infeasible pair is a valid verdict (`feasible`
/// false, zero floor), not an error.
///
/// # Safety
///
/// `scenario` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sky_stability_floor(
    scenario: *const SkyScenario,
    user: usize,
    uav: usize,
    out: *mut SkyStabilityReport,
) -> SkyStatus {
    guarded(|| {
        if scenario.is_null() || out.is_null() {
            return fail(SkyStatus::NullPointer, "scenario or out pointer is null");
        }
        let s = &(*scenario).inner;
        if user >= s.users.len() || uav >= s.uavs.len() {
            return fail(
                SkyStatus::InvalidArgument,
                format!(
                    "pair ({user}, {uav}) out of range for {} users × {} UAVs",
                    s.users.len(),
                    s.uavs.len()
                ),
            );
        }
        let disc = match s.pair_discretization(user, uav) {
            Ok(d) => d,
            Err(e) => return fail(SkyStatus::Internal, e.to_string()),
        };
        match stability_pipeline(
            &s.pair_state(user, uav),
            &disc,
            &s.model,
            &s.users[user],
            &s.uavs[uav],
            &s.channel,
        ) {
            Ok(report) => {
                *out = SkyStabilityReport {
                    delivery_probability: report.gamma,
                    latency_budget_s: report.budget.t_budget,
                    min_bandwidth_hz: report.min_bandwidth_hz.unwrap_or(0.0),
                    feasible: report.min_bandwidth_hz.is_some(),
                };
                SkyStatus::Ok
            }
            Err(e) => fail(SkyStatus::Internal, e.to_string()),
        }
    })
}

/// Solves the Stackelberg equilibrium of a scenario. On success `*out`
/// owns the result; release it with [`sky_equilibrium_free`].
///
/// # Safety
///
/// `scenario` must be a live scenario handle and `out` a valid pointer to
/// a `*mut SkyEquilibrium` slot.
#[no_mangle]
pub unsafe extern "C" fn sky_equilibrium_solve(
    scenario: *const SkyScenario,
    out: *mut *mut SkyEquilibrium,
) -> SkyStatus {
    guarded(|| {
        if scenario.is_null() || out.is_null() {
            return fail(SkyStatus::NullPointer, "scenario or out pointer is null");
        }
        match solve_equilibrium(&(*scenario).inner) {
            Ok(eq) => {
                *out = Box::into_raw(Box::new(SkyEquilibrium { inner: eq }));
                SkyStatus::Ok
            }
            Err(e) => fail(game_status(&e), e.to_string()),
        }
    })
}

/// Releases an equilibrium. Null is a no-op.
///
/// # Safety
///
/// `eq` must be null or a pointer obtained from [`sky_equilibrium_solve`]
/// that has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn sky_equilibrium_free(eq: *mut SkyEquilibrium) {
    if !eq.is_null() {
        drop(Box::from_raw(eq));
    }
}

/// Number of UAV outcomes in an equilibrium; 0 for a null handle.
///
/// # Safety
///
/// `eq` must be null or a live equilibrium handle.
#[no_mangle]
pub unsafe extern "C" fn sky_equilibrium_n_uavs(eq: *const SkyEquilibrium) -> usize {
    if eq.is_null() {
        return 0;
    }
    (*eq).inner.uavs.len()
}

/// Number of user outcomes in an equilibrium; 0 for a null handle.
///
/// # Safety
///
/// `eq` must be null or a live equilibrium handle.
#[no_mangle]
pub unsafe extern "C" fn sky_equilibrium_n_users(eq: *const SkyEquilibrium) -> usize {
    if eq.is_null() {
        return 0;
    }
    (*eq).inner.users.len()
}

/// Copies the outcome of UAV `idx` into `*out`.
///
/// # Safety
///
/// `eq` must be a live equilibrium handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sky_equilibrium_uav(
    eq: *const SkyEquilibrium,
    idx: usize,
    out: *mut SkyUavOutcome,
) -> SkyStatus {
    guarded(|| {
        if eq.is_null() || out.is_null() {
            return fail(SkyStatus::NullPointer, "equilibrium or out pointer is null");
        }
        let inner = &(*eq).inner;
        let Some(uav) = inner.uavs.get(idx) else {
            return fail(
                SkyStatus::InvalidArgument,
                format!("UAV index {idx} out of range for {}", inner.uavs.len()),
            );
        };
        let demand: f64 = inner
            .users
            .iter()
            .filter(|u| u.uav_idx == uav.uav_idx)
            .map(|u| u.demand)
            .sum();
        *out = SkyUavOutcome {
            price: uav.price,
            leader_utility: uav.leader_utility,
            capacity_mhz: uav.aggregates.capacity,
            demand_mhz: demand,
            served_users: uav.served.len(),
            price_case: match uav.case {
                PriceCase::Interior => SkyPriceCase::Interior,
                PriceCase::StabilityCapped => SkyPriceCase::StabilityCapped,
                PriceCase::CapacityFloored => SkyPriceCase::CapacityFloored,
            },
        };
        SkyStatus::Ok
    })
}

/// Copies the outcome of user `idx` into `*out`.
///
/// # Safety
///
/// `eq` must be a live equilibrium handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sky_equilibrium_user(
    eq: *const SkyEquilibrium,
    idx: usize,
    out: *mut SkyUserOutcome,
) -> SkyStatus {
    guarded(|| {
        if eq.is_null() || out.is_null() {
            return fail(SkyStatus::NullPointer, "equilibrium or out pointer is null");
        }
        let inner = &(*eq).inner;
        let Some(user) = inner.users.iter().find(|u| u.user_idx == idx) else {
            return fail(
                SkyStatus::InvalidArgument,
                format!("user index {idx} out of range for {}", inner.users.len()),
            );
        };
        *out = SkyUserOutcome {
            serving_uav: user.uav_idx,
            demand_mhz: user.demand,
            kappa_min_mhz: user.kappa_min,
            price: user.price,
            follower_utility: user.follower_utility,
            delivery_probability: user.gamma,
        };
        SkyStatus::Ok
    })
}

/// Trains the pricing agents on a scenario and summarizes the run. With
/// `params.prune` set the default pruning schedule is applied; otherwise
/// the networks stay dense. On [`SkyStatus::Diverged`] the stats cover the
/// stable prefix of the run (zeros when no epoch completed) so callers can
/// still report it.
///
/// # Safety
///
/// `scenario` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sky_train_run(
    scenario: *const SkyScenario,
    params: SkyTrainParams,
    out: *mut SkyTrainStats,
) -> SkyStatus {
    guarded(move || {
        if scenario.is_null() || out.is_null() {
            return fail(SkyStatus::NullPointer, "scenario or out pointer is null");
        }
        if params.epochs == 0 {
            return fail(SkyStatus::InvalidArgument, "epochs must be at least 1");
        }
        let s = &(*scenario).inner;
        let mut env_cfg = EnvConfig::for_scenario(s);
        env_cfg.episode_len = params.steps_per_epoch;
        let mut env = match MamdpEnv::new(s.clone(), env_cfg) {
            Ok(env) => env,
            Err(e) => return fail(env_status(&e), e.to_string()),
        };
        let optimum = match env.known_optimum() {
            Ok(opt) => mean(&opt.rewards),
            Err(e) => return fail(env_status(&e), e.to_string()),
        };

        let mut config = TrainConfig {
            epochs: params.epochs,
            steps_per_epoch: params.steps_per_epoch,
            prune: params.prune.then(PruneSchedule::default),
            ..TrainConfig::default()
        };
        if params.actor_lr > 0.0 {
            config.actor_lr = params.actor_lr;
        }
        if params.critic_lr > 0.0 {
            config.critic_lr = params.critic_lr;
        }

        let (metrics, status) = match train(&mut env, &config, params.seed) {
            Ok(result) => (result.metrics, SkyStatus::Ok),
            Err(failure) => match failure.error {
                PpoError::Diverged { .. } => {
                    set_error(failure.error.to_string());
                    (failure.metrics, SkyStatus::Diverged)
                }
                PpoError::InvalidConfig(_) => {
                    return fail(SkyStatus::InvalidArgument, failure.error.to_string())
                }
                other => return fail(SkyStatus::Internal, other.to_string()),
            },
        };

        let curve: Vec<f64> = metrics.iter().map(|m| m.mean_reward).collect();
        let final_mean = if curve.is_empty() {
            0.0
        } else {
            skymarket::experiments::final20(&curve)
        };
        *out = SkyTrainStats {
            final_mean_reward: final_mean,
            fraction_of_optimum: if optimum > 0.0 { final_mean / optimum } else { 0.0 },
            final_density: metrics.last().map_or(1.0, |m| m.density),
            epochs_run: metrics.len(),
        };
        status
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
