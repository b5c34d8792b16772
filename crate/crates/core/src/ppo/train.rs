//! The PPO training loop: rollout collection, advantage estimation,
//! minibatched clipped-surrogate updates, and scheduled pruning events.
//!
//! Each UAV agent owns an independent actor (pricing policy) and critic
//! (value function) unless weight sharing is enabled, in which case one
//! agent pair is trained on the pooled experience of all UAVs. All
//! randomness flows from a single master seed through fixed derivation
//! order, so runs are exactly reproducible.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, MamdpEnv, Observation};

use super::gae::{gae, normalize, returns};
use super::loss::{actor_loss, critic_loss, ActorBatch, CriticBatch, GaussianPolicy};
use super::net::{Gradients, MaskedNetwork};
use super::prune::{all_importances, apply_pruning, prune_threshold, sparsity_schedule};
use super::prune::{PruneSchedule, ThresholdRule};
use super::PpoError;

/// Learned log-std is kept inside this interval after every update.
pub const LOG_STD_RANGE: (f64, f64) = (-4.0, 1.0);

/// Turns a flattened observation into the network input encoding: every
/// entry shifted so mid-scale values sit near zero.
///
/// The shift is a learning-stability requirement, not cosmetics. The raw
/// flattened window is all-positive (prices and demands scaled into
/// [0, 1]); a critic whose output must grow during early training then
/// aligns its first-layer weights with the mean input and acquires a
/// spurious positive sensitivity to every entry — including the agent's
/// own latest posted price. Through the γ·V(s_{t+1}) term of the TD error
/// that sensitivity pays the policy fake credit for raising prices, and
/// the fake credit can exceed the true reward slope by an order of
/// magnitude, dragging prices toward the ceiling. Centering removes the
/// preferred growth direction.
pub fn center_input(mut flat: Vec<f64>) -> Vec<f64> {
    for v in &mut flat {
        *v -= 0.5;
    }
    flat
}

/// Gradient-descent flavor used for both actor and critic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    /// Plain stochastic gradient descent (the default).
    Sgd,
    /// Adaptive moment estimation.
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Training epochs; one epoch is one environment episode.
    pub epochs: usize,
    /// Steps per epoch; must equal the environment's episode length.
    pub steps_per_epoch: usize,
    /// Actor learning rate l¹.
    pub actor_lr: f64,
    /// Critic learning rate l².
    pub critic_lr: f64,
    /// Discount γ.
    pub gamma: f64,
    /// GAE λ.
    pub gae_lambda: f64,
    /// Surrogate clip φ.
    pub clip: f64,
    /// Minibatch size for updates.
    pub minibatch: usize,
    /// Passes over each epoch's data per update.
    pub update_epochs: usize,
    /// Hidden layer widths of both actor and critic.
    pub hidden: Vec<usize>,
    /// Initial value of the global log standard deviation.
    pub log_std_init: f64,
    pub optimizer: Optimizer,
    /// Pruning schedule; `None` trains dense.
    pub prune: Option<PruneSchedule>,
    pub threshold_rule: ThresholdRule,
    /// Train one shared actor/critic pair on pooled experience instead of
    /// independent ones per agent.
    pub shared_policy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            steps_per_epoch: 200,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip: 0.2,
            minibatch: 32,
            update_epochs: 4,
            hidden: vec![256, 256],
            log_std_init: 0.5f64.ln(),
            optimizer: Optimizer::Sgd,
            prune: None,
            threshold_rule: ThresholdRule::Quantile,
            shared_policy: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let mut problems = Vec::new();
        if self.steps_per_epoch == 0 {
            problems.push("steps_per_epoch must be at least 1".to_string());
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            problems.push("learning rates must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            problems.push(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            problems.push(format!(
                "gae_lambda must lie in [0, 1], got {}",
                self.gae_lambda
            ));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            problems.push(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if self.minibatch == 0 {
            problems.push("minibatch must be at least 1".to_string());
        }
        if self.update_epochs == 0 {
            problems.push("update_epochs must be at least 1".to_string());
        }
        if self.hidden.iter().any(|&w| w == 0) {
            problems.push("hidden layer widths must be positive".to_string());
        }
        if let Some(schedule) = &self.prune {
            if let Err(e) = schedule.validate() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PpoError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// One trained agent: pricing policy plus value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub critic: MaskedNetwork,
}

/// One agent's experience from one epoch.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
}

/// Per-epoch training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-step reward, averaged over agents.
    pub mean_reward: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Mean hidden-neuron density over all trained networks.
    pub density: f64,
    /// Wall-clock seconds for this epoch (kept in memory; excluded from
    /// emitted artifacts, which must be byte-reproducible).
    pub seconds: f64,
    pub agent_mean_rewards: Vec<f64>,
    pub agent_mean_prices: Vec<f64>,
    pub agent_mean_demands: Vec<f64>,
    /// A pruning event fired this epoch.
    pub pruned: bool,
    /// A pruning event was skipped by the layer-collapse guard.
    pub collapse_skipped: bool,
}

/// Outcome of a full training run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    /// One agent per UAV, or a single shared agent when weight sharing is on.
    pub agents: Vec<Agent>,
    pub metrics: Vec<EpochMetrics>,
}

/// Training failure carrying the metrics collected before the failure, so
/// callers can still report the stable prefix of the run.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct TrainFailure {
    pub error: PpoError,
    pub metrics: Vec<EpochMetrics>,
}

enum OptState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        m: Gradients,
        v: Gradients,
        m_scalar: f64,
        v_scalar: f64,
    },
}

impl OptState {
    fn new(kind: Optimizer, net: &MaskedNetwork) -> Self {
        match kind {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, eps } => OptState::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: Gradients::zeros_like(net),
                v: Gradients::zeros_like(net),
                m_scalar: 0.0,
                v_scalar: 0.0,
            },
        }
    }

    /// One descent step on a network and (optionally) one extra scalar
    /// parameter, using the same optimizer clock.
    fn step(
        &mut self,
        net: &mut MaskedNetwork,
        scalar: Option<(&mut f64, f64)>,
        grads: &Gradients,
        lr: f64,
    ) {
        match self {
            OptState::Sgd => {
                net.apply_update(grads, lr);
                if let Some((value, g)) = scalar {
                    *value -= lr * g;
                }
            }
            OptState::Adam {
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
                m_scalar,
                v_scalar,
            } => {
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                let mut effective = Gradients::zeros_like(net);
                for li in 0..grads.weights.len() {
                    let gm = &mut m.weights[li];
                    let gv = &mut v.weights[li];
                    let g = &grads.weights[li];
                    effective.weights[li] = DMatrix::from_fn(g.nrows(), g.ncols(), |r, c| {
                        let gi = g[(r, c)];
                        gm[(r, c)] = *beta1 * gm[(r, c)] + (1.0 - *beta1) * gi;
                        gv[(r, c)] = *beta2 * gv[(r, c)] + (1.0 - *beta2) * gi * gi;
                        (gm[(r, c)] / bc1) / ((gv[(r, c)] / bc2).sqrt() + *eps)
                    });
                    let bm = &mut m.bias[li];
                    let bv = &mut v.bias[li];
                    let gb = &grads.bias[li];
                    effective.bias[li] = DVector::from_fn(gb.len(), |r, _| {
                        let gi = gb[r];
                        bm[r] = *beta1 * bm[r] + (1.0 - *beta1) * gi;
                        bv[r] = *beta2 * bv[r] + (1.0 - *beta2) * gi * gi;
                        (bm[r] / bc1) / ((bv[r] / bc2).sqrt() + *eps)
                    });
                }
                net.apply_update(&effective, lr);
                if let Some((value, g)) = scalar {
                    *m_scalar = *beta1 * *m_scalar + (1.0 - *beta1) * g;
                    *v_scalar = *beta2 * *v_scalar + (1.0 - *beta2) * g * g;
                    *value -= lr * (*m_scalar / bc1) / ((*v_scalar / bc2).sqrt() + *eps);
                }
            }
        }
    }
}

/// Runs PPO training over the environment. On a NaN loss the run aborts
/// with [`PpoError::Diverged`], returning the metrics of the epochs that
/// completed cleanly inside the [`TrainFailure`].
pub fn train(
    env: &mut MamdpEnv,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainResult, TrainFailure> {
    let mut metrics = Vec::new();
    let mut agents = Vec::new();
    match train_inner(env, config, seed, &mut agents, &mut metrics) {
        Ok(()) => Ok(TrainResult { agents, metrics }),
        Err(error) => Err(TrainFailure { error, metrics }),
    }
}

fn train_inner(
    env: &mut MamdpEnv,
    config: &TrainConfig,
    seed: u64,
    agents: &mut Vec<Agent>,
    metrics: &mut Vec<EpochMetrics>,
) -> Result<(), PpoError> {
    config.validate()?;
    if config.steps_per_epoch != env.config().episode_len {
        return Err(PpoError::InvalidConfig(format!(
            "steps_per_epoch {} must equal the environment's episode_len {}",
            config.steps_per_epoch,
            env.config().episode_len
        )));
    }

    let n_env_agents = env.n_agents();
    let n_trained = if config.shared_policy { 1 } else { n_env_agents };
    let obs_dim = env.observation_len();

    // Fixed seed-derivation order: one init seed per trained agent, then the
    // rollout sampler, then the minibatch shuffler.
    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let init_seeds: Vec<u64> = (0..n_trained).map(|_| master.next_u64()).collect();
    let mut rollout_rng = ChaCha12Rng::seed_from_u64(master.next_u64());
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(master.next_u64());

    agents.clear();
    for &s in &init_seeds {
        let mut rng = ChaCha12Rng::seed_from_u64(s);
        let actor = MaskedNetwork::mlp(obs_dim, &config.hidden, 1, &mut rng);
        let critic = MaskedNetwork::mlp(obs_dim, &config.hidden, 1, &mut rng);
        let policy = GaussianPolicy::new(
            actor,
            config.log_std_init,
            env.config().price_floor,
            env.config().price_ceiling,
        )?;
        agents.push(Agent { policy, critic });
    }
    let mut opt_states: Vec<(OptState, OptState)> = agents
        .iter()
        .map(|a| {
            (
                OptState::new(config.optimizer, &a.policy.net),
                OptState::new(config.optimizer, &a.critic),
            )
        })
        .collect();

    let env_seed = env.config().seed;
    for epoch in 0..config.epochs {
        let started = std::time::Instant::now();

        // --- Rollout: one episode, all agents stepping simultaneously. ---
        let mut trajectories: Vec<Trajectory> =
            (0..n_env_agents).map(|_| Trajectory::default()).collect();
        let mut price_sums = vec![0.0; n_env_agents];
        let mut demand_sums = vec![0.0; n_env_agents];
        let mut obs = env.reset_with_seed(env_seed.wrapping_add(epoch as u64));
        for _ in 0..config.steps_per_epoch {
            let mut actions = Vec::with_capacity(n_env_agents);
            for n in 0..n_env_agents {
                let trained = if config.shared_policy { 0 } else { n };
                let flat = center_input(env.flatten(n, &obs[n]));
                let x = DVector::from_column_slice(&flat);
                let (action, log_prob) = agents[trained].policy.sample(&x, &mut rollout_rng)?;
                let value = agents[trained].critic.forward_scalar(&x)?;
                let traj = &mut trajectories[n];
                traj.observations.push(flat);
                traj.actions.push(action);
                traj.log_probs.push(log_prob);
                traj.values.push(value);
                actions.push(action);
            }
            let out = env.step(&actions)?;
            for n in 0..n_env_agents {
                trajectories[n].rewards.push(out.rewards[n]);
                trajectories[n].dones.push(out.done);
                price_sums[n] += out.transitions[n].price;
                demand_sums[n] += out.transitions[n].demand;
            }
            obs = out.observations;
        }

        // --- Advantage estimation (time-limit bootstrap from the critic). ---
        let mut batches: Vec<(Trajectory, Vec<f64>, Vec<f64>)> = Vec::new();
        for (n, traj) in trajectories.iter().enumerate() {
            let trained = if config.shared_policy { 0 } else { n };
            let x = DVector::from_vec(center_input(env.flatten(n, &obs[n])));
            let bootstrap = agents[trained].critic.forward_scalar(&x)?;
            let advantages = gae(
                &traj.rewards,
                &traj.values,
                bootstrap,
                config.gamma,
                config.gae_lambda,
            );
            let rets = returns(&advantages, &traj.values);
            batches.push((traj.clone(), advantages, rets));
        }

        // --- Updates: minibatched clipped-surrogate descent. ---
        let mut actor_loss_sum = 0.0;
        let mut critic_loss_sum = 0.0;
        let mut loss_count = 0usize;
        for trained in 0..n_trained {
            // Pool the experience of every env agent this network serves.
            let mut observations: Vec<&Vec<f64>> = Vec::new();
            let mut actions: Vec<f64> = Vec::new();
            let mut log_probs: Vec<f64> = Vec::new();
            let mut advantages: Vec<f64> = Vec::new();
            let mut rets: Vec<f64> = Vec::new();
            for n in 0..n_env_agents {
                if !config.shared_policy && n != trained {
                    continue;
                }
                let (traj, adv, ret) = &batches[n];
                observations.extend(traj.observations.iter());
                actions.extend_from_slice(&traj.actions);
                log_probs.extend_from_slice(&traj.log_probs);
                advantages.extend_from_slice(adv);
                rets.extend_from_slice(ret);
            }
            normalize(&mut advantages);

            let total = actions.len();
            let mut order: Vec<usize> = (0..total).collect();
            for _ in 0..config.update_epochs {
                order.shuffle(&mut shuffle_rng);
                for chunk in order.chunks(config.minibatch) {
                    let obs_mat = DMatrix::from_fn(obs_dim, chunk.len(), |r, c| {
                        observations[chunk[c]][r]
                    });
                    let actor_batch = ActorBatch {
                        obs: obs_mat.clone(),
                        actions: chunk.iter().map(|&i| actions[i]).collect(),
                        old_log_probs: chunk.iter().map(|&i| log_probs[i]).collect(),
                        advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                    };
                    let agent = &mut agents[trained];
                    let (a_loss, a_grads) = actor_loss(&agent.policy, &actor_batch, config.clip)?;
                    let critic_batch = CriticBatch {
                        obs: obs_mat,
                        returns: chunk.iter().map(|&i| rets[i]).collect(),
                    };
                    let (c_loss, c_grads) = critic_loss(&agent.critic, &critic_batch)?;
                    if !a_loss.is_finite() || !c_loss.is_finite() {
                        return Err(PpoError::Diverged { epoch });
                    }
                    let (actor_opt, critic_opt) = &mut opt_states[trained];
                    actor_opt.step(
                        &mut agent.policy.net,
                        Some((&mut agent.policy.log_std, a_grads.log_std)),
                        &a_grads.net,
                        config.actor_lr,
                    );
                    agent.policy.log_std =
                        agent.policy.log_std.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
                    critic_opt.step(&mut agent.critic, None, &c_grads, config.critic_lr);
                    actor_loss_sum += a_loss;
                    critic_loss_sum += c_loss;
                    loss_count += 1;
                }
            }
        }

        // --- Scheduled pruning event. ---
        let mut pruned = false;
        let mut collapse_skipped = false;
        if let Some(schedule) = &config.prune {
            if schedule.fires_at(epoch) {
                let density = sparsity_schedule(epoch, schedule);
                for agent in agents.iter_mut() {
                    for net in [&mut agent.policy.net, &mut agent.critic] {
                        let phi =
                            prune_threshold(&all_importances(net), density, config.threshold_rule);
                        match apply_pruning(net, phi) {
                            Ok(()) => pruned = true,
                            Err(PpoError::LayerCollapse { .. }) => collapse_skipped = true,
                            Err(other) => return Err(other),
                        }
                    }
                }
            }
        }

        let steps = config.steps_per_epoch as f64;
        let agent_mean_rewards: Vec<f64> = trajectories
            .iter()
            .map(|t| t.rewards.iter().sum::<f64>() / steps)
            .collect();
        let density = agents
            .iter()
            .map(|a| (a.policy.net.density() + a.critic.density()) / 2.0)
            .sum::<f64>()
            / agents.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            mean_reward: agent_mean_rewards.iter().sum::<f64>() / n_env_agents as f64,
            actor_loss: actor_loss_sum / loss_count.max(1) as f64,
            critic_loss: critic_loss_sum / loss_count.max(1) as f64,
            density,
            seconds: started.elapsed().as_secs_f64(),
            agent_mean_rewards,
            agent_mean_prices: price_sums.iter().map(|s| s / steps).collect(),
            agent_mean_demands: demand_sums.iter().map(|s| s / steps).collect(),
            pruned,
            collapse_skipped,
        });
    }
    Ok(())
}

/// Runs one episode with an arbitrary per-agent decision rule and returns
/// each agent's mean per-step reward. The rule sees the agent index and its
/// current observation.
pub fn run_episode<F>(
    env: &mut MamdpEnv,
    reset_seed: u64,
    mut act: F,
) -> Result<Vec<f64>, EnvError>
where
    F: FnMut(usize, &Observation) -> f64,
{
    let mut obs = env.reset_with_seed(reset_seed);
    let steps = env.config().episode_len;
    let mut sums = vec![0.0; env.n_agents()];
    for _ in 0..steps {
        let actions: Vec<f64> = (0..env.n_agents()).map(|n| act(n, &obs[n])).collect();
        let out = env.step(&actions)?;
        for (s, r) in sums.iter_mut().zip(&out.rewards) {
            *s += r;
        }
        obs = out.observations;
    }
    Ok(sums.into_iter().map(|s| s / steps as f64).collect())
}

/// Runs one episode with trained agents acting deterministically (their
/// distribution means) and returns per-agent mean rewards.
pub fn evaluate_agents(
    env: &mut MamdpEnv,
    agents: &[Agent],
    shared: bool,
    reset_seed: u64,
) -> Result<Vec<f64>, PpoError> {
    let ceiling = env.config().price_ceiling;
    let capacities: Vec<f64> = (0..env.n_agents()).map(|n| env.capacity(n)).collect();
    let mut failure: Option<PpoError> = None;
    let rewards = run_episode(env, reset_seed, |n, obs| {
        let trained = if shared { 0 } else { n };
        let flat = center_input(crate::env::flatten_observation(obs, ceiling, capacities[n]));
        match agents[trained].policy.mean(&DVector::from_vec(flat)) {
            Ok(a) => a,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(rewards),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::scenario::{generate_scenario, ScenarioConfig};

    fn small_env(episode_len: usize, seed: u64) -> MamdpEnv {
        let scenario = generate_scenario(&ScenarioConfig::default(), seed).unwrap();
        let config = EnvConfig {
            episode_len,
            ..EnvConfig::for_scenario(&scenario)
        };
        MamdpEnv::new(scenario, config).unwrap()
    }

    fn small_config(epochs: usize, steps: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            steps_per_epoch: steps,
            hidden: vec![16, 16],
            minibatch: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_policy_and_empty_metrics() {
        let mut env = small_env(10, 0);
        let result = train(&mut env, &small_config(0, 10), 7).unwrap();
        assert!(result.metrics.is_empty());
        assert_eq!(result.agents.len(), env.n_agents());
        for agent in &result.agents {
            assert_eq!(agent.policy.net.density(), 1.0);
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let mut env_a = small_env(10, 0);
        let mut env_b = small_env(10, 0);
        let config = small_config(3, 10);
        let a = train(&mut env_a, &config, 42).unwrap();
        let b = train(&mut env_b, &config, 42).unwrap();
        // Wall-clock timing is the one intentionally nondeterministic field.
        let strip = |metrics: &[EpochMetrics]| {
            metrics
                .iter()
                .map(|m| EpochMetrics {
                    seconds: 0.0,
                    ..m.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.metrics), strip(&b.metrics));
        for (x, y) in a.agents.iter().zip(&b.agents) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn different_seeds_give_different_runs() {
        let mut env_a = small_env(10, 0);
        let mut env_b = small_env(10, 0);
        let config = small_config(2, 10);
        let a = train(&mut env_a, &config, 1).unwrap();
        let b = train(&mut env_b, &config, 2).unwrap();
        let rewards = |r: &TrainResult| -> Vec<f64> { r.metrics.iter().map(|m| m.mean_reward).collect() };
        assert_ne!(rewards(&a), rewards(&b));
    }

    #[test]
    fn pruning_disabled_keeps_all_masks_full() {
        let mut env = small_env(8, 0);
        let mut config = small_config(4, 8);
        config.prune = Some(PruneSchedule {
            start_epoch: 100,
            ..PruneSchedule::default()
        });
        let result = train(&mut env, &config, 3).unwrap();
        for m in &result.metrics {
            assert_eq!(m.density, 1.0);
            assert!(!m.pruned);
        }
    }

    #[test]
    fn pruning_events_reduce_density_toward_target() {
        let mut env = small_env(8, 0);
        let mut config = small_config(14, 8);
        config.hidden = vec![32, 32];
        config.prune = Some(PruneSchedule {
            w_init: 1.0,
            w_target: 0.5,
            start_epoch: 2,
            prune_steps: 5,
            frequency: 2,
        });
        let result = train(&mut env, &config, 5).unwrap();
        let final_density = result.metrics.last().unwrap().density;
        assert!(
            (final_density - 0.5).abs() <= 0.06,
            "final density {final_density}"
        );
        // Density is nonincreasing across epochs.
        for w in result.metrics.windows(2) {
            assert!(w[1].density <= w[0].density + 1e-12);
        }
        // Masked parameters are exactly zero in the trained nets.
        for agent in &result.agents {
            for (h, mask) in agent.policy.net.masks.iter().enumerate() {
                for j in 0..mask.len() {
                    if mask[j] == 0.0 {
                        assert!(agent.policy.net.layers[h]
                            .weights
                            .row(j)
                            .iter()
                            .all(|&w| w == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn steps_mismatch_is_rejected() {
        let mut env = small_env(10, 0);
        let config = small_config(1, 20);
        let err = train(&mut env, &config, 0).unwrap_err();
        assert!(matches!(err.error, PpoError::InvalidConfig(_)));
    }

    #[test]
    fn shared_policy_trains_a_single_agent_pair() {
        let mut env = small_env(10, 0);
        let mut config = small_config(2, 10);
        config.shared_policy = true;
        let result = train(&mut env, &config, 11).unwrap();
        assert_eq!(result.agents.len(), 1);
        assert_eq!(result.metrics.len(), 2);
        let mut eval_env = small_env(10, 0);
        let rewards = evaluate_agents(&mut eval_env, &result.agents, true, 0).unwrap();
        assert_eq!(rewards.len(), eval_env.n_agents());
    }

    #[test]
    fn adam_optimizer_runs_and_differs_from_sgd() {
        let mut env_a = small_env(10, 0);
        let mut env_b = small_env(10, 0);
        let sgd = small_config(2, 10);
        let mut adam = small_config(2, 10);
        adam.optimizer = Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let a = train(&mut env_a, &sgd, 4).unwrap();
        let b = train(&mut env_b, &adam, 4).unwrap();
        assert_ne!(
            a.agents[0].policy.net.layers[0].weights,
            b.agents[0].policy.net.layers[0].weights
        );
    }

    #[test]
    fn run_episode_reports_constant_price_rewards() {
        let mut env = small_env(10, 0);
        let opt = env.known_optimum().unwrap();
        let rewards = run_episode(&mut env, 0, |n, _| opt.prices[n]).unwrap();
        for (r, expect) in rewards.iter().zip(&opt.rewards) {
            assert!((r - expect).abs() < 1e-12);
        }
    }
}
