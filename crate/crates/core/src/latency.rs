//! Per-iteration latency of one sensing→communication→computing→control
//! loop between a ground user and the UAV serving it.
//!
//! All quantities are in SI units (meters, seconds, watts, hertz, bits). The
//! bandwidth market quotes allocations in MHz; conversion happens at the
//! scenario boundary, never here.
//!
//! The four components of one loop iteration:
//!
//! * **sense** — positioning plus sensor-readout time of the user device,
//! * **comm** — uplink of the state packet at Shannon rate `κ log₂(1+SNR)`,
//! * **compute** — scheduling overhead plus command synthesis at the UAV,
//! * **control** — actuator settling, taken as four time constants of the
//!   first-order velocity response (settles to within e⁻⁴ ≈ 1.8 % of the
//!   commanded value).

use nalgebra::Vector3;
use thiserror::Error;

/// Errors raised by the latency layer.
#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    /// User and UAV occupy the same point; the path-loss model diverges.
    #[error("user and UAV positions coincide; channel gain is undefined")]
    CoincidentPositions,
    /// Zero (or negative) data rate cannot carry a packet.
    #[error("no usable link: data rate is {rate} bit/s")]
    NoLink { rate: f64 },
    /// Structural misuse, e.g. mismatched slice lengths.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Aggregate latency over an empty user set is undefined.
    #[error("UAV serves no users; aggregate latency is undefined")]
    NoUsers,
}

/// Ground robot / user device parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDevice {
    /// Position in meters (ground users have z = 0).
    pub position: Vector3<f64>,
    /// Uplink transmit power in watts.
    pub tx_power_w: f64,
    /// State-packet size in bits.
    pub packet_bits: f64,
    /// Positioning acquisition time in seconds.
    pub t_pos: f64,
    /// Sensor readout time in seconds.
    pub t_read: f64,
    /// On-device preprocessing time in seconds.
    pub t_comp: f64,
    /// Task urgency weight ϑ in the bandwidth market.
    pub urgency: f64,
}

/// UAV server/leader parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UavNode {
    /// Position in meters.
    pub position: Vector3<f64>,
    /// Onboard CPU frequency in cycles per second.
    pub cpu_hz: f64,
    /// Command-synthesis workload in CPU cycles per input bit.
    pub cycles_per_bit: f64,
    /// Fixed scheduling/queuing overhead per iteration in seconds.
    pub t_base: f64,
    /// Time constant μ of the first-order actuator response, seconds.
    pub time_constant: f64,
    /// Total sellable bandwidth in hertz.
    pub bandwidth_total_hz: f64,
    /// Marginal cost of serving one market unit of bandwidth.
    pub unit_cost: f64,
    /// Sampling period of the control loops this UAV closes, seconds.
    pub sampling_period: f64,
}

/// Wireless-channel constants shared by every link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Reference channel gain at 1 m (includes antenna/carrier constants).
    pub ref_gain: f64,
    /// Path-loss exponent α.
    pub path_loss_exp: f64,
    /// Receiver noise power in watts over the allocated band.
    pub noise_power_w: f64,
}

/// One loop iteration's latency, split by phase. `total` is always the exact
/// sum of the four components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyBreakdown {
    pub sense: f64,
    pub comm: f64,
    pub compute: f64,
    pub control: f64,
    pub total: f64,
}

/// Distance-dependent channel power gain `h = h₀ d^{−α}`.
pub fn channel_gain(
    user: &UserDevice,
    uav: &UavNode,
    params: &ChannelParams,
) -> Result<f64, LatencyError> {
    let d = (user.position - uav.position).norm();
    if d == 0.0 {
        return Err(LatencyError::CoincidentPositions);
    }
    Ok(params.ref_gain * d.powf(-params.path_loss_exp))
}

/// Uplink signal-to-noise ratio `p h / σ²`.
pub fn snr(user: &UserDevice, uav: &UavNode, params: &ChannelParams) -> Result<f64, LatencyError> {
    Ok(user.tx_power_w * channel_gain(user, uav, params)? / params.noise_power_w)
}

/// Shannon rate `κ log₂(1 + SNR)` in bit/s for an allocation of `bandwidth_hz`.
pub fn data_rate(bandwidth_hz: f64, snr: f64) -> f64 {
    debug_assert!(bandwidth_hz >= 0.0, "bandwidth must be non-negative");
    bandwidth_hz * (1.0 + snr.max(0.0)).log2()
}

/// Spectral efficiency `log₂(1 + SNR)` in bit/s/Hz — the per-unit-bandwidth
/// rate that the market layer prices against.
pub fn spectral_efficiency(snr: f64) -> f64 {
    (1.0 + snr.max(0.0)).log2()
}

/// Time to push one state packet through the link.
pub fn comm_latency(packet_bits: f64, rate: f64) -> Result<f64, LatencyError> {
    if rate <= 0.0 {
        return Err(LatencyError::NoLink { rate });
    }
    Ok(packet_bits / rate)
}

/// Sensing time of one iteration: positioning plus sensor readout.
pub fn sense_latency(user: &UserDevice) -> f64 {
    user.t_pos + user.t_read
}

/// Computing time of one iteration: on-device preprocessing, UAV scheduling
/// overhead, and command synthesis proportional to the packet size.
pub fn compute_latency(user: &UserDevice, uav: &UavNode) -> f64 {
    user.t_comp + uav.t_base + user.packet_bits * uav.cycles_per_bit / uav.cpu_hz
}

/// Actuation time of one iteration: four time constants of the first-order
/// velocity response, after which the residual is e⁻⁴ < 2 %.
pub fn control_latency(uav: &UavNode) -> f64 {
    4.0 * uav.time_constant
}

/// First-order actuator response `v(t) = v_cmd + (v₀ − v_cmd) e^{−t/μ}`.
pub fn first_order_response(current: f64, command: f64, time_constant: f64, t: f64) -> f64 {
    command + (current - command) * (-t / time_constant).exp()
}

/// Full latency breakdown of one loop iteration for a user served by `uav`
/// with `bandwidth_hz` of uplink spectrum.
pub fn total_latency(
    user: &UserDevice,
    uav: &UavNode,
    bandwidth_hz: f64,
    params: &ChannelParams,
) -> Result<LatencyBreakdown, LatencyError> {
    let link_snr = snr(user, uav, params)?;
    let rate = data_rate(bandwidth_hz, link_snr);
    let sense = sense_latency(user);
    let comm = comm_latency(user.packet_bits, rate)?;
    let compute = compute_latency(user, uav);
    let control = control_latency(uav);
    Ok(LatencyBreakdown {
        sense,
        comm,
        compute,
        control,
        total: sense + comm + compute + control,
    })
}

/// Worst per-iteration latency across the users served by one UAV, given one
/// bandwidth allocation per user. This is the loop deadline the UAV must
/// meet for all of its tenants simultaneously.
pub fn aggregate_latency(
    users: &[UserDevice],
    uav: &UavNode,
    allocations_hz: &[f64],
    params: &ChannelParams,
) -> Result<f64, LatencyError> {
    if users.len() != allocations_hz.len() {
        return Err(LatencyError::InvalidArgument(format!(
            "{} users but {} allocations",
            users.len(),
            allocations_hz.len()
        )));
    }
    if users.is_empty() {
        return Err(LatencyError::NoUsers);
    }
    let mut worst = f64::NEG_INFINITY;
    for (user, &bw) in users.iter().zip(allocations_hz) {
        let breakdown = total_latency(user, uav, bw, params)?;
        worst = worst.max(breakdown.total);
    }
    Ok(worst)
}
