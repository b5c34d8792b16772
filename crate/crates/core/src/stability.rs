//! Bridge from the control layer's success-probability threshold Γ to the
//! network layer's bandwidth floor.
//!
//! The chain, evaluated once per user–UAV pair:
//!
//! 1. Γ from the Lyapunov descent condition ([`crate::control::success_threshold`]);
//! 2. a Markov bound turns "deliver on time with probability ≥ Γ" into a cap
//!    on the *expected* loop latency, `d_req = (1 − Γ) · e`;
//! 3. subtracting the deterministic sensing/computing/actuation time leaves
//!    the communication budget `t_budget = d_req − t_fixed`;
//! 4. inverting the Shannon rate gives the cheapest bandwidth that fits the
//!    packet into that budget, `κ_min = S / (t_budget · log₂(1 + SNR))`.
//!
//! A non-positive `t_budget` means no amount of bandwidth can save the loop:
//! the scenario itself is infeasible for this pair.

use thiserror::Error;

use crate::control::{self, AugmentedState, ControlError, Discretization, SystemModel};
use crate::latency::{self, ChannelParams, LatencyError, UavNode, UserDevice};

/// Errors raised while turning a stability threshold into a bandwidth floor.
#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    /// The fixed (non-communication) latency already exceeds the required
    /// expected-latency cap; no bandwidth purchase can help.
    #[error("latency budget exhausted: {t_budget}s remain for communication")]
    BudgetExhausted { t_budget: f64 },
    /// The link carries no information (SNR ≤ 0), so no finite bandwidth
    /// meets any deadline.
    #[error("link has non-positive SNR; no finite bandwidth meets the deadline")]
    DeadLink,
    /// Propagated channel/latency failure.
    #[error(transparent)]
    Latency(#[from] LatencyError),
    /// Propagated control-layer failure.
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Latency budget derived from a delivery-probability requirement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityBudget {
    /// Required on-time delivery probability Γ ∈ [0, 1).
    pub gamma: f64,
    /// Cap on the expected loop latency, `(1 − Γ) · e`, seconds.
    pub d_req: f64,
    /// Deterministic sensing + computing + actuation time, seconds.
    pub t_fixed: f64,
    /// What remains for communication: `d_req − t_fixed`, seconds.
    pub t_budget: f64,
}

impl StabilityBudget {
    /// Whether any bandwidth allocation can satisfy this budget.
    pub fn is_feasible(&self) -> bool {
        self.t_budget > 0.0
    }
}

/// Stability verdict for one user–UAV pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// Required delivery probability at the evaluated state (0 when the
    /// descent gap is degenerate).
    pub gamma: f64,
    /// Derived latency budget.
    pub budget: StabilityBudget,
    /// Minimum bandwidth in Hz meeting the budget, or `None` when the pair
    /// is infeasible (no budget remains for communication).
    pub min_bandwidth_hz: Option<f64>,
}

impl StabilityReport {
    pub fn is_feasible(&self) -> bool {
        self.min_bandwidth_hz.is_some()
    }
}

/// Converts a delivery-probability requirement into a latency budget via the
/// Markov bound `Pr[T > d] ≤ E[T]/d`: keeping the expected latency below
/// `(1 − Γ) e` guarantees on-time delivery with probability at least Γ.
pub fn latency_budget(gamma: f64, sampling_period: f64, t_fixed: f64) -> StabilityBudget {
    let d_req = (1.0 - gamma) * sampling_period;
    StabilityBudget {
        gamma,
        d_req,
        t_fixed,
        t_budget: d_req - t_fixed,
    }
}

/// Smallest bandwidth (Hz) that pushes `packet_bits` through a link of the
/// given SNR within `t_budget` seconds.
pub fn min_bandwidth(packet_bits: f64, t_budget: f64, snr: f64) -> Result<f64, StabilityError> {
    if t_budget <= 0.0 {
        return Err(StabilityError::BudgetExhausted { t_budget });
    }
    let eff = latency::spectral_efficiency(snr);
    if eff <= 0.0 {
        return Err(StabilityError::DeadLink);
    }
    Ok(packet_bits / (t_budget * eff))
}

/// Runs the full threshold → budget → bandwidth-floor chain for one
/// user–UAV pair at the given loop state.
///
/// A degenerate descent gap is treated as Γ = 0 (no delivery requirement).
/// An exhausted budget is reported as an infeasible pair rather than an
/// error so sweeps can tally infeasible scenarios; structural failures
/// (dead or undefined links) still surface as errors.
pub fn stability_pipeline(
    state: &AugmentedState,
    disc: &Discretization,
    model: &SystemModel,
    user: &UserDevice,
    uav: &UavNode,
    params: &ChannelParams,
) -> Result<StabilityReport, StabilityError> {
    let gamma = match control::success_threshold(state, disc, model) {
        Ok(g) => g,
        Err(ControlError::DegenerateState) => 0.0,
        Err(other) => return Err(other.into()),
    };
    let t_fixed = latency::sense_latency(user)
        + latency::compute_latency(user, uav)
        + latency::control_latency(uav);
    let budget = latency_budget(gamma, model.sampling_period, t_fixed);
    let link_snr = latency::snr(user, uav, params)?;
    let min_bandwidth_hz = match min_bandwidth(user.packet_bits, budget.t_budget, link_snr) {
        Ok(bw) => Some(bw),
        Err(StabilityError::BudgetExhausted { .. }) => None,
        Err(other) => return Err(other),
    };
    Ok(StabilityReport {
        gamma,
        budget,
        min_bandwidth_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{design_gain, discretize};
    use crate::latency::{comm_latency, data_rate};
    use nalgebra::{Vector3, Vector6};
    use proptest::prelude::*;

    #[test]
    fn budget_follows_markov_bound() {
        let b = latency_budget(0.8, 0.5, 0.04);
        assert!((b.d_req - 0.1).abs() < 1e-15);
        assert!((b.t_budget - 0.06).abs() < 1e-15);
        assert!(b.is_feasible());
    }

    #[test]
    fn zero_gamma_leaves_whole_period() {
        let b = latency_budget(0.0, 0.5, 0.1);
        assert_eq!(b.d_req, 0.5);
        assert!((b.t_budget - 0.4).abs() < 1e-15);
    }

    #[test]
    fn budget_infeasible_when_fixed_latency_dominates() {
        let b = latency_budget(0.9, 0.5, 0.2);
        // Only 0.05 s of expected latency allowed but 0.2 s is unavoidable.
        assert!(b.t_budget < 0.0);
        assert!(!b.is_feasible());
        assert_eq!(
            min_bandwidth(40_000.0, b.t_budget, 100.0),
            Err(StabilityError::BudgetExhausted { t_budget: b.t_budget })
        );
    }

    #[test]
    fn min_bandwidth_matches_bisection_oracle() {
        let packet = 48_000.0;
        let t_budget = 0.07;
        let snr = 250.0;
        let closed_form = min_bandwidth(packet, t_budget, snr).unwrap();
        // Oracle: bisect the smallest κ whose comm latency fits the budget.
        let fits = |bw: f64| comm_latency(packet, data_rate(bw, snr)).unwrap() <= t_budget;
        let (mut lo, mut hi) = (1.0f64, 1e9f64);
        assert!(!fits(lo) && fits(hi));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fits(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((closed_form - hi).abs() / hi < 1e-9);
    }

    #[test]
    fn min_bandwidth_exactly_meets_deadline() {
        let bw = min_bandwidth(40_000.0, 0.05, 99.0).unwrap();
        let t = comm_latency(40_000.0, data_rate(bw, 99.0)).unwrap();
        assert!((t - 0.05).abs() < 1e-12);
    }

    #[test]
    fn dead_link_is_rejected() {
        assert_eq!(
            min_bandwidth(40_000.0, 0.1, 0.0),
            Err(StabilityError::DeadLink)
        );
    }

    fn pipeline_fixture() -> (SystemModel, Discretization, UserDevice, UavNode, ChannelParams) {
        let base = SystemModel::double_integrator(1e-4, 0.95, 0.5).unwrap();
        let disc0 = discretize(&base, 0.0).unwrap();
        let design = design_gain(&base, &disc0).unwrap();
        let model = base.with_design(&design);
        let disc = discretize(&model, 0.125).unwrap();
        let user = UserDevice {
            position: Vector3::new(200.0, 0.0, 0.0),
            tx_power_w: 0.2,
            packet_bits: 48_000.0,
            t_pos: 0.1,
            t_read: 0.002,
            t_comp: 0.001,
            urgency: 3.0,
        };
        let uav = UavNode {
            position: Vector3::new(0.0, 0.0, 100.0),
            cpu_hz: 1e9,
            cycles_per_bit: 1000.0,
            t_base: 0.002,
            time_constant: 0.005,
            bandwidth_total_hz: 20e6,
            unit_cost: 0.1,
            sampling_period: 0.5,
        };
        let params = ChannelParams {
            ref_gain: 1e-4,
            path_loss_exp: 2.0,
            noise_power_w: 1e-13,
        };
        (model, disc, user, uav, params)
    }

    #[test]
    fn pipeline_composes_the_stage_functions() {
        let (model, disc, user, uav, params) = pipeline_fixture();
        let state = AugmentedState::new(
            Vector6::new(30.0, -20.0, 0.0, 0.0, 0.0, 0.0),
            Vector3::zeros(),
        );
        let report = stability_pipeline(&state, &disc, &model, &user, &uav, &params).unwrap();

        // Manual composition oracle.
        let gamma = control::success_threshold(&state, &disc, &model).unwrap();
        let t_fixed = 0.1 + 0.002 + (0.001 + 0.002 + 48_000.0 * 1000.0 / 1e9) + 0.02;
        let budget = latency_budget(gamma, 0.5, t_fixed);
        let snr = latency::snr(&user, &uav, &params).unwrap();
        let expect = min_bandwidth(48_000.0, budget.t_budget, snr).unwrap();

        assert_eq!(report.gamma, gamma);
        assert!((report.budget.t_fixed - t_fixed).abs() < 1e-15);
        assert_eq!(report.min_bandwidth_hz, Some(expect));
        assert!(report.is_feasible());
        // Sanity: the floor is far below the UAV's sellable total.
        assert!(expect < uav.bandwidth_total_hz);
    }

    #[test]
    fn pipeline_treats_origin_state_as_no_requirement() {
        let (model, disc, user, uav, params) = pipeline_fixture();
        let state = AugmentedState::zero();
        let report = stability_pipeline(&state, &disc, &model, &user, &uav, &params).unwrap();
        assert_eq!(report.gamma, 0.0);
        assert!(report.is_feasible());
    }

    #[test]
    fn pipeline_marks_infeasible_when_demands_exceed_period() {
        let (model, disc, mut user, uav, params) = pipeline_fixture();
        // A sensing phase that eats the whole period leaves nothing for comm.
        user.t_pos = 0.6;
        let state = AugmentedState::new(
            Vector6::new(30.0, -20.0, 0.0, 0.0, 0.0, 0.0),
            Vector3::zeros(),
        );
        let report = stability_pipeline(&state, &disc, &model, &user, &uav, &params).unwrap();
        assert!(!report.is_feasible());
        assert!(report.budget.t_budget < 0.0);
    }

    proptest! {
        /// A stricter delivery requirement never shrinks the bandwidth floor,
        /// and a better link never raises it.
        #[test]
        fn bandwidth_floor_monotonicity(
            g1 in 0.0f64..0.99,
            g2 in 0.0f64..0.99,
            snr1 in 1.0f64..1e6,
            snr2 in 1.0f64..1e6,
        ) {
            prop_assume!(g1 < g2);
            prop_assume!(snr1 < snr2);
            let t_fixed = 0.05;
            let b1 = latency_budget(g1, 0.5, t_fixed);
            let b2 = latency_budget(g2, 0.5, t_fixed);
            if b2.is_feasible() {
                let k_loose = min_bandwidth(48_000.0, b1.t_budget, snr1).unwrap();
                let k_tight = min_bandwidth(48_000.0, b2.t_budget, snr1).unwrap();
                prop_assert!(k_tight >= k_loose);
                let k_good_link = min_bandwidth(48_000.0, b1.t_budget, snr2).unwrap();
                prop_assert!(k_good_link <= k_loose);
            }
        }

        /// The Markov budget shrinks linearly as Γ rises.
        #[test]
        fn budget_decreases_in_gamma(g in 0.0f64..1.0) {
            let b = latency_budget(g, 0.5, 0.0);
            prop_assert!((b.d_req - 0.5 * (1.0 - g)).abs() < 1e-12);
        }
    }
}
