//! Reproducible problem instances: user/UAV placement, per-entity parameter
//! sampling, and assembly of the shared control model.
//!
//! A [`Scenario`] is a pure function of `(ScenarioConfig, seed)`. All
//! randomness flows through one seeded ChaCha stream with a fixed draw
//! order, so equal inputs yield byte-identical scenarios (verified by
//! [`Scenario::digest`]). Users are placed uniformly in a square area;
//! UAVs are spread over the user cloud by a deterministic k-means pass and
//! hover at a fixed altitude.

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{self, AugmentedState, ControlError, Discretization, SystemModel};
use crate::latency::{self, ChannelParams, UavNode, UserDevice};

/// Errors raised during scenario construction.
#[derive(Debug, Error)]
pub enum ScenarioError {
    /// One or more configuration fields violate their contracts.
    #[error("invalid scenario configuration:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),
    /// The control design failed for the configured loop model.
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Declarative description of a scenario family. Ranges `[lo, hi]` are
/// sampled uniformly per entity; set `lo == hi` to pin a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of UAV leaders.
    pub n_uavs: usize,
    /// Number of ground users (followers).
    pub n_users: usize,
    /// Side length of the square deployment area, meters.
    pub area_extent_m: f64,
    /// Hover altitude of every UAV, meters.
    pub uav_altitude_m: f64,
    /// Sellable bandwidth per UAV, Hz (range).
    pub bandwidth_total_hz: [f64; 2],
    /// Uplink transmit power per user, watts (range).
    pub tx_power_w: [f64; 2],
    /// State-packet size per user, bits (range).
    pub packet_bits: [f64; 2],
    /// Task urgency weight per user (range).
    pub urgency: [f64; 2],
    /// Marginal bandwidth cost per UAV, price units per MHz (range).
    pub unit_cost: [f64; 2],
    /// Reference channel gain at 1 m (−40 dB → 1e−4).
    pub ref_gain: f64,
    /// Path-loss exponent α.
    pub path_loss_exp: f64,
    /// Receiver noise power, watts (−100 dBm → 1e−13).
    pub noise_power_w: f64,
    /// Control-loop sampling period, seconds.
    pub sampling_period_s: f64,
    /// Lyapunov decay rate ρ.
    pub decay_rate: f64,
    /// UAV CPU frequency, Hz.
    pub cpu_hz: f64,
    /// Command-synthesis workload, cycles per bit.
    pub cycles_per_bit: f64,
    /// Positioning acquisition time, seconds.
    pub t_pos_s: f64,
    /// Sensor readout time, seconds.
    pub t_read_s: f64,
    /// On-device preprocessing time, seconds.
    pub t_comp_s: f64,
    /// UAV scheduling overhead, seconds.
    pub t_base_s: f64,
    /// Actuator time constant μ, seconds.
    pub time_constant_s: f64,
    /// Per-step process-noise variance on each state component.
    pub noise_variance: f64,
    /// Lowest allowed posted price.
    pub price_floor: f64,
    /// Highest allowed posted price (ϱ_max).
    pub price_ceiling: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_uavs: 3,
            n_users: 5,
            area_extent_m: 1000.0,
            uav_altitude_m: 100.0,
            bandwidth_total_hz: [15e6, 25e6],
            tx_power_w: [0.1, 0.3],
            packet_bits: [40_000.0, 64_000.0],
            urgency: [1.0, 5.0],
            unit_cost: [0.05, 0.15],
            ref_gain: 1e-4,
            path_loss_exp: 2.0,
            noise_power_w: 1e-13,
            sampling_period_s: 0.5,
            decay_rate: 0.95,
            cpu_hz: 1e9,
            cycles_per_bit: 1000.0,
            t_pos_s: 0.1,
            t_read_s: 0.002,
            t_comp_s: 0.001,
            t_base_s: 0.002,
            time_constant_s: 0.005,
            noise_variance: 1e-4,
            price_floor: 0.0,
            price_ceiling: 5.0,
        }
    }
}

impl ScenarioConfig {
    /// Returns every constraint violation (empty when the config is valid),
    /// so callers can report all problems at once.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_uavs == 0 {
            errs.push("n_uavs must be at least 1".to_string());
        }
        if self.n_users == 0 {
            errs.push("n_users must be at least 1".to_string());
        }
        let positive = [
            ("area_extent_m", self.area_extent_m),
            ("uav_altitude_m", self.uav_altitude_m),
            ("ref_gain", self.ref_gain),
            ("path_loss_exp", self.path_loss_exp),
            ("noise_power_w", self.noise_power_w),
            ("sampling_period_s", self.sampling_period_s),
            ("cpu_hz", self.cpu_hz),
            ("time_constant_s", self.time_constant_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let non_negative = [
            ("cycles_per_bit", self.cycles_per_bit),
            ("t_pos_s", self.t_pos_s),
            ("t_read_s", self.t_read_s),
            ("t_comp_s", self.t_comp_s),
            ("t_base_s", self.t_base_s),
            ("noise_variance", self.noise_variance),
            ("price_floor", self.price_floor),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        let ranges = [
            ("bandwidth_total_hz", self.bandwidth_total_hz),
            ("tx_power_w", self.tx_power_w),
            ("packet_bits", self.packet_bits),
            ("urgency", self.urgency),
            ("unit_cost", self.unit_cost),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                errs.push(format!(
                    "{name} must be a nonempty positive range [lo, hi], got [{lo}, {hi}]"
                ));
            }
        }
        if !(self.decay_rate > 0.0 && self.decay_rate < 1.0) {
            errs.push(format!(
                "decay_rate must lie strictly inside (0, 1), got {}",
                self.decay_rate
            ));
        }
        if !(self.price_floor < self.price_ceiling) {
            errs.push(format!(
                "price_floor {} must be below price_ceiling {}",
                self.price_floor, self.price_ceiling
            ));
        }
        errs
    }
}

/// A fully assembled, immutable problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub users: Vec<UserDevice>,
    pub uavs: Vec<UavNode>,
    pub channel: ChannelParams,
    /// Shared loop model with the designed gain and Lyapunov weight.
    pub model: SystemModel,
    pub price_floor: f64,
    pub price_ceiling: f64,
    pub seed: u64,
    pub config: ScenarioConfig,
}

fn sample_range<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Deterministic k-means spread of `k` centers over the user positions:
/// farthest-point initialization (first pick seeded), then Lloyd iterations.
/// Surplus centers beyond the user count fall back to uniform placement.
fn spread_centers<R: Rng>(
    rng: &mut R,
    users_xy: &[(f64, f64)],
    k: usize,
    extent: f64,
) -> Vec<(f64, f64)> {
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(k);
    if !users_xy.is_empty() {
        let first = rng.random_range(0..users_xy.len());
        centers.push(users_xy[first]);
        while centers.len() < k.min(users_xy.len()) {
            // Farthest user from the current center set (ties → lowest index).
            let (mut best_idx, mut best_d2) = (0usize, f64::NEG_INFINITY);
            for (i, &(x, y)) in users_xy.iter().enumerate() {
                let d2 = centers
                    .iter()
                    .map(|&(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2))
                    .fold(f64::INFINITY, f64::min);
                if d2 > best_d2 {
                    best_d2 = d2;
                    best_idx = i;
                }
            }
            centers.push(users_xy[best_idx]);
        }
    }
    while centers.len() < k {
        let half = extent / 2.0;
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        centers.push((x, y));
    }
    for _ in 0..25 {
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for &(x, y) in users_xy {
            let (mut best, mut best_d2) = (0usize, f64::INFINITY);
            for (c, &(cx, cy)) in centers.iter().enumerate() {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = c;
                }
            }
            sums[best].0 += x;
            sums[best].1 += y;
            sums[best].2 += 1;
        }
        for (c, &(sx, sy, count)) in sums.iter().enumerate() {
            if count > 0 {
                centers[c] = (sx / count as f64, sy / count as f64);
            }
            // Empty clusters keep their previous position.
        }
    }
    centers
}

/// Generates a scenario from a validated config and a seed.
///
/// Draw order (fixed for reproducibility): per-user position and parameters,
/// UAV spread, per-UAV parameters. The loop gain is designed once on the
/// zero-latency discretization and shared by every tracking pair.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(ScenarioError::InvalidConfig(violations));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let half = config.area_extent_m / 2.0;

    let mut users = Vec::with_capacity(config.n_users);
    for _ in 0..config.n_users {
        let x = rng.random_range(-half..half);
        let y = rng.random_range(-half..half);
        users.push(UserDevice {
            position: Vector3::new(x, y, 0.0),
            tx_power_w: sample_range(&mut rng, config.tx_power_w),
            packet_bits: sample_range(&mut rng, config.packet_bits),
            t_pos: config.t_pos_s,
            t_read: config.t_read_s,
            t_comp: config.t_comp_s,
            urgency: sample_range(&mut rng, config.urgency),
        });
    }

    let users_xy: Vec<(f64, f64)> = users
        .iter()
        .map(|u| (u.position.x, u.position.y))
        .collect();
    let centers = spread_centers(&mut rng, &users_xy, config.n_uavs, config.area_extent_m);

    let mut uavs = Vec::with_capacity(config.n_uavs);
    for &(x, y) in &centers {
        uavs.push(UavNode {
            position: Vector3::new(x, y, config.uav_altitude_m),
            cpu_hz: config.cpu_hz,
            cycles_per_bit: config.cycles_per_bit,
            t_base: config.t_base_s,
            time_constant: config.time_constant_s,
            bandwidth_total_hz: sample_range(&mut rng, config.bandwidth_total_hz),
            unit_cost: sample_range(&mut rng, config.unit_cost),
            sampling_period: config.sampling_period_s,
        });
    }

    let base = SystemModel::double_integrator(
        config.noise_variance,
        config.decay_rate,
        config.sampling_period_s,
    )?;
    let disc = control::discretize(&base, 0.0)?;
    let design = control::design_gain(&base, &disc)?;
    let model = base.with_design(&design);

    Ok(Scenario {
        users,
        uavs,
        channel: ChannelParams {
            ref_gain: config.ref_gain,
            path_loss_exp: config.path_loss_exp,
            noise_power_w: config.noise_power_w,
        },
        model,
        price_floor: config.price_floor,
        price_ceiling: config.price_ceiling,
        seed,
        config: config.clone(),
    })
}

impl Scenario {
    /// Initial loop state for a tracking pair: the horizontal offset between
    /// the user and the UAV, with zero vertical error, zero relative velocity,
    /// and no command in flight.
    pub fn pair_state(&self, user_idx: usize, uav_idx: usize) -> AugmentedState {
        let user = &self.users[user_idx];
        let uav = &self.uavs[uav_idx];
        let x = Vector6::new(
            user.position.x - uav.position.x,
            user.position.y - uav.position.y,
            0.0,
            0.0,
            0.0,
            0.0,
        );
        AugmentedState::new(x, nalgebra::Vector3::zeros())
    }

    /// Deterministic (bandwidth-independent) latency of one loop iteration:
    /// sensing + computing + actuation.
    pub fn fixed_latency(&self, user_idx: usize, uav_idx: usize) -> f64 {
        let user = &self.users[user_idx];
        let uav = &self.uavs[uav_idx];
        latency::sense_latency(user)
            + latency::compute_latency(user, uav)
            + latency::control_latency(uav)
    }

    /// Discretization of the pair's loop at its fixed latency (the
    /// communication share varies with purchased bandwidth and is accounted
    /// for by the latency budget instead). Clamped to the sampling period so
    /// the stability pipeline can still evaluate hopeless pairs and report
    /// them infeasible through the budget.
    pub fn pair_discretization(
        &self,
        user_idx: usize,
        uav_idx: usize,
    ) -> Result<Discretization, ControlError> {
        let latency = self
            .fixed_latency(user_idx, uav_idx)
            .min(self.model.sampling_period);
        control::discretize(&self.model, latency)
    }

    /// SHA-256 digest of the fully resolved instance (positions, sampled
    /// parameters, channel constants, designed gain). Equal digests mean
    /// byte-identical downstream behavior.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        text.push_str(&format!("seed={}\n", self.seed));
        for (i, u) in self.users.iter().enumerate() {
            text.push_str(&format!(
                "user {i} pos=({:?},{:?},{:?}) p={:?} s={:?} t=({:?},{:?},{:?}) urg={:?}\n",
                u.position.x,
                u.position.y,
                u.position.z,
                u.tx_power_w,
                u.packet_bits,
                u.t_pos,
                u.t_read,
                u.t_comp,
                u.urgency
            ));
        }
        for (n, v) in self.uavs.iter().enumerate() {
            text.push_str(&format!(
                "uav {n} pos=({:?},{:?},{:?}) cpu={:?} f0={:?} tb={:?} mu={:?} cap={:?} cost={:?} e={:?}\n",
                v.position.x,
                v.position.y,
                v.position.z,
                v.cpu_hz,
                v.cycles_per_bit,
                v.t_base,
                v.time_constant,
                v.bandwidth_total_hz,
                v.unit_cost,
                v.sampling_period
            ));
        }
        text.push_str(&format!(
            "channel h0={:?} alpha={:?} noise={:?}\n",
            self.channel.ref_gain, self.channel.path_loss_exp, self.channel.noise_power_w
        ));
        text.push_str(&format!(
            "market floor={:?} ceiling={:?}\n",
            self.price_floor, self.price_ceiling
        ));
        for v in self.model.gain.iter() {
            text.push_str(&format!("{v:?} "));
        }
        let hash = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in hash {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}
