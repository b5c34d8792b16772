//! Multi-agent pricing environment wrapping the bandwidth market.
//!
//! Each UAV is one agent. Per step every agent posts a price; the users it
//! serves respond with their closed-form best demands (floors and capacity
//! respected); the agent's reward is its scaled profit. Observations are
//! sliding windows of the agent's own last L (price, aggregate demand)
//! pairs — agents never see each other's books, so the problem is partially
//! observed. Association and stability floors are computed once at
//! construction and stay fixed for the episode.
//!
//! With demand noise off, the environment is a deterministic function of the
//! seed and the action sequence, and the per-step reward of the equilibrium
//! price from [`crate::game::solve_equilibrium`] is the per-step maximum —
//! giving learning curves a known optimum to converge to.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{self, GameError, MarketInputs};
use crate::scenario::Scenario;

/// Smallest price ever posted to followers. A literal zero price makes the
/// follower problem unbounded, so clamping snaps to this instead.
pub const MIN_POSITIVE_PRICE: f64 = 1e-6;

/// Errors raised by the environment.
#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    /// An action was NaN.
    #[error("agent {agent} posted an invalid (NaN) action")]
    InvalidAction { agent: usize },
    /// The action vector length does not match the agent count.
    #[error("expected {expected} actions, got {got}")]
    WrongActionCount { expected: usize, got: usize },
    /// The configuration violates its invariants.
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    /// Propagated market failure.
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Knobs of the decision process laid over a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Observation window length L.
    pub window_len: usize,
    /// Reward scale a multiplying the leader profit.
    pub reward_scale: f64,
    /// Lowest admissible posted price (clamp target).
    pub price_floor: f64,
    /// Highest admissible posted price ϱ_max (clamp target).
    pub price_ceiling: f64,
    /// Steps per episode.
    pub episode_len: usize,
    /// Standard deviation of the optional multiplicative demand noise
    /// (log-normal, factor clamped to [0.5, 2]); 0 disables it.
    pub demand_noise_std: f64,
    /// Seed of the environment's own RNG (demand noise stream).
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            window_len: 5,
            reward_scale: 1e-2,
            price_floor: 0.0,
            price_ceiling: 5.0,
            episode_len: 200,
            demand_noise_std: 0.0,
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Copies the price interval from a scenario, keeping other defaults.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        EnvConfig {
            price_floor: scenario.price_floor,
            price_ceiling: scenario.price_ceiling,
            ..EnvConfig::default()
        }
    }

    fn validate(&self) -> Result<(), EnvError> {
        let mut problems = Vec::new();
        if self.window_len == 0 {
            problems.push("window_len must be at least 1".to_string());
        }
        if !(self.reward_scale > 0.0) {
            problems.push(format!(
                "reward_scale must be positive, got {}",
                self.reward_scale
            ));
        }
        if !(self.price_floor >= 0.0) {
            problems.push(format!(
                "price_floor must be nonnegative, got {}",
                self.price_floor
            ));
        }
        if !(self.price_floor < self.price_ceiling) {
            problems.push(format!(
                "price_floor {} must lie below price_ceiling {}",
                self.price_floor, self.price_ceiling
            ));
        }
        if self.episode_len == 0 {
            problems.push("episode_len must be at least 1".to_string());
        }
        if !(self.demand_noise_std >= 0.0) {
            problems.push(format!(
                "demand_noise_std must be nonnegative, got {}",
                self.demand_noise_std
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EnvError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// One agent's observation: its own last L (price, aggregate demand) pairs,
/// oldest first, zero-padded before L real steps have happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub window: Vec<(f64, f64)>,
}

impl Observation {
    /// All-zero window of length `window_len` (the reset observation).
    pub fn padded(window_len: usize) -> Self {
        Observation {
            window: vec![(0.0, 0.0); window_len],
        }
    }
}

/// Encodes an observation as a flat vector of length 2L: per entry, oldest
/// first, price normalized by the ceiling then demand normalized by the
/// agent's capacity.
pub fn flatten_observation(obs: &Observation, price_ceiling: f64, capacity: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * obs.window.len());
    for &(price, demand) in &obs.window {
        out.push(price / price_ceiling);
        out.push(demand / capacity);
    }
    out
}

/// Inverse of [`flatten_observation`].
pub fn unflatten_observation(flat: &[f64], price_ceiling: f64, capacity: f64) -> Observation {
    let window = flat
        .chunks_exact(2)
        .map(|pair| (pair[0] * price_ceiling, pair[1] * capacity))
        .collect();
    Observation { window }
}

/// One logged transition, ready for CSV emission.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub step: usize,
    pub agent: usize,
    /// Price actually posted (after clamping).
    pub price: f64,
    /// Aggregate demand sold by this agent at that price, MHz.
    pub demand: f64,
    pub reward: f64,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub transitions: Vec<Transition>,
}

/// Per-step reward ceiling of each agent under the equilibrium price.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    /// Equilibrium price per agent.
    pub prices: Vec<f64>,
    /// Per-step reward a·U^L(ϱ*) per agent.
    pub rewards: Vec<f64>,
}

/// The multi-agent pricing environment.
#[derive(Debug, Clone)]
pub struct MamdpEnv {
    scenario: Scenario,
    config: EnvConfig,
    inputs: MarketInputs,
    /// Sellable capacity per agent, MHz.
    capacities: Vec<f64>,
    windows: Vec<Vec<(f64, f64)>>,
    step_count: usize,
    rng: ChaCha12Rng,
}

impl MamdpEnv {
    /// Builds the environment: validates the config, fixes the association
    /// and stability floors, and resets the windows.
    pub fn new(scenario: Scenario, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let inputs = game::market_inputs(&scenario)?;
        let capacities = scenario
            .uavs
            .iter()
            .map(|u| u.bandwidth_total_hz / game::MARKET_UNIT_HZ)
            .collect();
        let windows = vec![vec![(0.0, 0.0); config.window_len]; scenario.uavs.len()];
        let rng = ChaCha12Rng::seed_from_u64(config.seed);
        Ok(MamdpEnv {
            scenario,
            config,
            inputs,
            capacities,
            windows,
            step_count: 0,
            rng,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.scenario.uavs.len()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// The fixed market view (association, floors) the episode runs under.
    pub fn market_inputs(&self) -> &MarketInputs {
        &self.inputs
    }

    /// Sellable capacity of one agent, MHz.
    pub fn capacity(&self, agent: usize) -> f64 {
        self.capacities[agent]
    }

    /// Length of a flattened observation vector.
    pub fn observation_len(&self) -> usize {
        2 * self.config.window_len
    }

    /// Flattens an observation with this agent's normalization constants.
    pub fn flatten(&self, agent: usize, obs: &Observation) -> Vec<f64> {
        flatten_observation(obs, self.config.price_ceiling, self.capacities[agent])
    }

    /// Restarts the episode with the configured seed.
    pub fn reset(&mut self) -> Vec<Observation> {
        self.reset_with_seed(self.config.seed)
    }

    /// Restarts the episode, reseeding the noise stream.
    pub fn reset_with_seed(&mut self, seed: u64) -> Vec<Observation> {
        for w in &mut self.windows {
            w.clear();
            w.resize(self.config.window_len, (0.0, 0.0));
        }
        self.step_count = 0;
        self.rng = ChaCha12Rng::seed_from_u64(seed);
        self.observations()
    }

    fn observations(&self) -> Vec<Observation> {
        self.windows
            .iter()
            .map(|w| Observation { window: w.clone() })
            .collect()
    }

    /// Clamps a raw action into the admissible price interval.
    pub fn clamp_action(&self, action: f64) -> f64 {
        action.clamp(
            self.config.price_floor.max(MIN_POSITIVE_PRICE),
            self.config.price_ceiling,
        )
    }

    /// Advances one step: prices in, demands and rewards out.
    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome, EnvError> {
        if actions.len() != self.n_agents() {
            return Err(EnvError::WrongActionCount {
                expected: self.n_agents(),
                got: actions.len(),
            });
        }
        if let Some(agent) = actions.iter().position(|a| a.is_nan()) {
            return Err(EnvError::InvalidAction { agent });
        }

        let mut rewards = Vec::with_capacity(self.n_agents());
        let mut transitions = Vec::with_capacity(self.n_agents());
        for (agent, &raw) in actions.iter().enumerate() {
            let price = self.clamp_action(raw);
            let served = &self.inputs.by_uav[agent];
            let views: Vec<&game::FollowerView> =
                served.iter().map(|&i| &self.inputs.followers[i]).collect();
            let demand_total = if views.is_empty() {
                0.0
            } else {
                let mut demands =
                    game::project_demands(&views, price, self.capacities[agent])?;
                if self.config.demand_noise_std > 0.0 {
                    perturb_demands(
                        &mut self.rng,
                        self.config.demand_noise_std,
                        &mut demands,
                        &views,
                        self.capacities[agent],
                    );
                }
                demands.iter().sum()
            };
            let profit = (price - self.scenario.uavs[agent].unit_cost) * demand_total;
            let reward = self.config.reward_scale * profit;
            rewards.push(reward);
            transitions.push(Transition {
                step: self.step_count,
                agent,
                price,
                demand: demand_total,
                reward,
            });
            let w = &mut self.windows[agent];
            w.remove(0);
            w.push((price, demand_total));
        }
        self.step_count += 1;
        Ok(StepOutcome {
            observations: self.observations(),
            rewards,
            done: self.step_count >= self.config.episode_len,
            transitions,
        })
    }

    /// Per-agent equilibrium price and the per-step reward it earns — the
    /// ceiling a perfect stationary policy attains with noise off.
    pub fn known_optimum(&self) -> Result<KnownOptimum, EnvError> {
        let eq = game::solve_with_inputs(&self.scenario, &self.inputs)?;
        let prices = eq.uavs.iter().map(|u| u.price).collect();
        let rewards = eq
            .uavs
            .iter()
            .map(|u| self.config.reward_scale * u.leader_utility)
            .collect();
        Ok(KnownOptimum { prices, rewards })
    }
}

/// Multiplies each demand by a clamped log-normal factor, re-imposing the
/// floors and the shared capacity (excess shrinks the above-floor part
/// proportionally). One draw per served user, in user order.
fn perturb_demands(
    rng: &mut ChaCha12Rng,
    sigma: f64,
    demands: &mut [f64],
    views: &[&game::FollowerView],
    capacity: f64,
) {
    for (d, f) in demands.iter_mut().zip(views) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let factor = (sigma * z).exp().clamp(0.5, 2.0);
        *d = (*d * factor).max(f.kappa_min);
    }
    let total: f64 = demands.iter().sum();
    if total > capacity {
        let floor_total: f64 = views.iter().map(|f| f.kappa_min).sum();
        let above = total - floor_total;
        if above > 0.0 {
            let scale = (capacity - floor_total) / above;
            for (d, f) in demands.iter_mut().zip(views) {
                *d = f.kappa_min + (*d - f.kappa_min) * scale;
            }
        }
    }
}
