//! Discrete-time model of one UAV tracking loop whose command arrives over
//! the network with a delay.
//!
//! Within each sampling period of length `e` the loop senses, transmits,
//! computes, and actuates; the command therefore only takes effect for the
//! trailing `ē = e − T` seconds, where `T` is the total loop latency of that
//! iteration. Exact integration of the continuous dynamics over the two
//! sub-intervals yields a linear system on the augmented state
//! `ζ = [x; u_prev]` (current relative state plus the command still being
//! applied from the previous period):
//!
//! * command delivered:  `ζ⁺ = Ψ_cl ζ + [σ; 0]` with `Ψ_cl = Ψ_d + Φ_d K`,
//! * command missed:     `ζ⁺ = Ψ_op ζ + [σ; 0]` (previous command held).
//!
//! [`success_threshold`] inverts the Lyapunov descent condition
//! `E[V(ζ⁺)] ≤ ρ V(ζ) + tr(P Σ)` into the minimum probability Γ with which
//! the command must arrive on time, which is what couples this module to the
//! bandwidth market: the network must be provisioned so that
//! `Pr[T ≤ e] ≥ Γ`.

use nalgebra::{DMatrix, SMatrix, SVector, Vector3, Vector6};
use thiserror::Error;

use crate::linalg::{self, LinalgError};

/// 6×6 continuous state block (position and velocity error).
pub type Mat6 = SMatrix<f64, 6, 6>;
/// 6×3 input block.
pub type Mat6x3 = SMatrix<f64, 6, 3>;
/// 9×9 augmented-state block.
pub type Mat9 = SMatrix<f64, 9, 9>;
/// 9×3 augmented input block.
pub type Mat9x3 = SMatrix<f64, 9, 3>;
/// Feedback gain mapping the augmented state to a command.
pub type GainMatrix = SMatrix<f64, 3, 9>;
/// Augmented state as a flat vector.
pub type Vec9 = SVector<f64, 9>;

/// Fixed-point tolerance for the Riccati gain design.
const RICCATI_TOL: f64 = 1e-10;
/// Iteration cap after which the pair is declared unstabilizable.
const RICCATI_MAX_ITERS: usize = 10_000;
/// Γ is clamped strictly below one so a positive latency budget always remains.
const THRESHOLD_CEILING: f64 = 1.0 - 1e-9;
/// |V_open − V_close| below this is treated as a degenerate state.
const DEGENERATE_GAP: f64 = 1e-12;

/// Errors raised by the delayed-control layer.
#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    /// Total loop latency exceeds the sampling period: the deadline is missed
    /// before the command can act at all.
    #[error("total latency {latency}s exceeds the sampling period {sampling_period}s")]
    InfeasibleLatency { latency: f64, sampling_period: f64 },
    /// Latency must be a finite, non-negative number of seconds.
    #[error("total latency must be finite and non-negative, got {latency}")]
    InvalidLatency { latency: f64 },
    /// Open- and closed-loop Lyapunov values coincide, so no success
    /// probability can be solved for; callers treat this state as Γ = 0.
    #[error("degenerate state: open- and closed-loop Lyapunov values coincide")]
    DegenerateState,
    /// The Riccati fixed point failed to converge, so no stabilizing gain
    /// exists for the discretized pair.
    #[error("gain design did not converge after {iterations} iterations (residual {residual:.3e}); the discretized pair is unstabilizable")]
    Unstabilizable { iterations: usize, residual: f64 },
    /// Model parameters violate their contracts (shape, definiteness, ranges).
    #[error("invalid model: {0}")]
    InvalidModel(String),
    /// Propagated dense linear-algebra failure.
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Continuous-time loop model plus the designed feedback law and the
/// quadratic certificate used by the stability tests.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    /// Continuous dynamics of the relative state, `ẋ = a x + b u + noise`.
    pub a: Mat6,
    /// Continuous input matrix.
    pub b: Mat6x3,
    /// Per-period process-noise covariance on the state block (PSD).
    pub noise_cov: Mat6,
    /// Feedback gain applied to the augmented state when a command lands.
    pub gain: GainMatrix,
    /// Positive-definite weight of the Lyapunov function `V(ζ) = ζᵀ P ζ`.
    pub lyapunov_weight: Mat9,
    /// Required per-period contraction factor ρ ∈ (0, 1).
    pub decay_rate: f64,
    /// Sampling period `e` in seconds.
    pub sampling_period: f64,
}

impl SystemModel {
    /// Validates and assembles a model. The gain and Lyapunov weight may be
    /// placeholders (e.g. zero gain, identity weight) until [`design_gain`]
    /// has run; both are still checked for their structural contracts.
    pub fn new(
        a: Mat6,
        b: Mat6x3,
        noise_cov: Mat6,
        gain: GainMatrix,
        lyapunov_weight: Mat9,
        decay_rate: f64,
        sampling_period: f64,
    ) -> Result<Self, ControlError> {
        if !(decay_rate > 0.0 && decay_rate < 1.0) {
            return Err(ControlError::InvalidModel(format!(
                "decay rate must lie in (0, 1), got {decay_rate}"
            )));
        }
        if !(sampling_period.is_finite() && sampling_period > 0.0) {
            return Err(ControlError::InvalidModel(format!(
                "sampling period must be positive and finite, got {sampling_period}"
            )));
        }
        let any_non_finite = a.iter().any(|v| !v.is_finite())
            || b.iter().any(|v| !v.is_finite())
            || noise_cov.iter().any(|v| !v.is_finite())
            || gain.iter().any(|v| !v.is_finite())
            || lyapunov_weight.iter().any(|v| !v.is_finite());
        if any_non_finite {
            return Err(ControlError::InvalidModel(
                "model matrices must have finite entries".to_string(),
            ));
        }
        if (noise_cov - noise_cov.transpose()).abs().max() > 1e-9 {
            return Err(ControlError::InvalidModel(
                "noise covariance must be symmetric".to_string(),
            ));
        }
        let min_eig = noise_cov
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        if min_eig < -1e-9 {
            return Err(ControlError::InvalidModel(format!(
                "noise covariance must be positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        if (lyapunov_weight - lyapunov_weight.transpose()).abs().max() > 1e-9 {
            return Err(ControlError::InvalidModel(
                "Lyapunov weight must be symmetric".to_string(),
            ));
        }
        if lyapunov_weight.cholesky().is_none() {
            return Err(ControlError::InvalidModel(
                "Lyapunov weight must be positive definite".to_string(),
            ));
        }
        Ok(Self {
            a,
            b,
            noise_cov,
            gain,
            lyapunov_weight,
            decay_rate,
            sampling_period,
        })
    }

    /// Double-integrator tracking model: position error integrates velocity
    /// error, velocity error integrates the (relative) acceleration command.
    /// Process noise is isotropic on all six states with the given variance.
    /// Gain and weight start as placeholders for [`design_gain`] to fill in.
    pub fn double_integrator(
        noise_variance: f64,
        decay_rate: f64,
        sampling_period: f64,
    ) -> Result<Self, ControlError> {
        let mut a = Mat6::zeros();
        for i in 0..3 {
            a[(i, i + 3)] = 1.0;
        }
        let mut b = Mat6x3::zeros();
        for i in 0..3 {
            b[(i + 3, i)] = 1.0;
        }
        Self::new(
            a,
            b,
            Mat6::identity() * noise_variance,
            GainMatrix::zeros(),
            Mat9::identity(),
            decay_rate,
            sampling_period,
        )
    }

    /// Returns a copy with the designed gain and certificate installed.
    pub fn with_design(&self, design: &GainDesign) -> Self {
        let mut out = self.clone();
        out.gain = design.gain;
        out.lyapunov_weight = design.cost_to_go;
        out
    }
}

/// Augmented loop state: current relative state plus the previous command
/// still in flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    /// Relative position/velocity error (6 entries).
    pub x: Vector6<f64>,
    /// Command applied during the previous period (3 entries).
    pub u_prev: Vector3<f64>,
}

impl AugmentedState {
    pub fn new(x: Vector6<f64>, u_prev: Vector3<f64>) -> Self {
        Self { x, u_prev }
    }

    pub fn zero() -> Self {
        Self {
            x: Vector6::zeros(),
            u_prev: Vector3::zeros(),
        }
    }

    /// Flattens to the 9-vector `[x; u_prev]`.
    pub fn as_vector(&self) -> Vec9 {
        let mut z = Vec9::zeros();
        z.fixed_rows_mut::<6>(0).copy_from(&self.x);
        z.fixed_rows_mut::<3>(6).copy_from(&self.u_prev);
        z
    }

    /// Rebuilds the structured state from the flat 9-vector.
    pub fn from_vector(z: &Vec9) -> Self {
        Self {
            x: z.fixed_rows::<6>(0).into_owned(),
            u_prev: z.fixed_rows::<3>(6).into_owned(),
        }
    }
}

/// Exact discretization of one sampling period under a fixed loop latency.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    /// State propagator `Ψ = exp(A e)` over the full period.
    pub psi: Mat6,
    /// Input integral over the execution window `[0, ē]` (fresh command).
    pub phi0: Mat6x3,
    /// Input integral over the latency window `[ē, e]` (held command).
    pub phi1: Mat6x3,
    /// Input integral over the full period `[0, e]` (command never updated).
    pub phi_hold: Mat6x3,
    /// Augmented drift `Ψ_d = [[Ψ, Φ¹], [0, 0]]`.
    pub psi_d: Mat9,
    /// Augmented input map `Φ_d = [[Φ⁰], [I]]`.
    pub phi_d: Mat9x3,
    /// Augmented hold map `Ψ_h = [[Ψ, Φ_hold], [0, I]]`.
    pub psi_h: Mat9,
    /// Closed-loop propagator `Ψ_cl = Ψ_d + Φ_d K` for the model's gain.
    pub psi_cl: Mat9,
    /// Open-loop propagator used when the command misses its deadline.
    pub psi_op: Mat9,
    /// Execution window `ē = e − latency` in seconds.
    pub exec_window: f64,
}

fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn to_fixed<const R: usize, const C: usize>(m: &DMatrix<f64>) -> SMatrix<f64, R, C> {
    SMatrix::from_column_slice(m.as_slice())
}

/// Discretizes the loop for one period with total latency `total_latency`.
///
/// Fails with [`ControlError::InfeasibleLatency`] when the latency exceeds
/// the sampling period (the command would act for a negative duration). All
/// integrals are computed exactly via the augmented matrix exponential, so
/// `phi0 + phi1 == phi_hold` holds to machine precision.
pub fn discretize(model: &SystemModel, total_latency: f64) -> Result<Discretization, ControlError> {
    if !total_latency.is_finite() || total_latency < 0.0 {
        return Err(ControlError::InvalidLatency {
            latency: total_latency,
        });
    }
    let e = model.sampling_period;
    if total_latency > e {
        return Err(ControlError::InfeasibleLatency {
            latency: total_latency,
            sampling_period: e,
        });
    }
    let exec_window = e - total_latency;
    let a_dyn = to_dyn(&model.a);
    let b_dyn = to_dyn(&model.b);

    let psi: Mat6 = to_fixed(&linalg::matrix_exponential(&a_dyn, e)?);
    let phi0: Mat6x3 = to_fixed(&linalg::integrate_exp_input(&a_dyn, &b_dyn, exec_window)?);
    let phi_hold: Mat6x3 = to_fixed(&linalg::integrate_exp_input(&a_dyn, &b_dyn, e)?);
    let phi1 = phi_hold - phi0;

    let mut psi_d = Mat9::zeros();
    psi_d.fixed_view_mut::<6, 6>(0, 0).copy_from(&psi);
    psi_d.fixed_view_mut::<6, 3>(0, 6).copy_from(&phi1);

    let mut phi_d = Mat9x3::zeros();
    phi_d.fixed_view_mut::<6, 3>(0, 0).copy_from(&phi0);
    phi_d
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&SMatrix::<f64, 3, 3>::identity());

    let mut psi_h = Mat9::zeros();
    psi_h.fixed_view_mut::<6, 6>(0, 0).copy_from(&psi);
    psi_h.fixed_view_mut::<6, 3>(0, 6).copy_from(&phi_hold);
    psi_h
        .fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&SMatrix::<f64, 3, 3>::identity());

    let psi_cl = psi_d + phi_d * model.gain;
    let psi_op = psi_h;

    Ok(Discretization {
        psi,
        phi0,
        phi1,
        phi_hold,
        psi_d,
        phi_d,
        psi_h,
        psi_cl,
        psi_op,
        exec_window,
    })
}

/// Advances the loop by one period.
///
/// With `delivered = true` a fresh command `u = gain · ζ` is applied over the
/// execution window and stored into `u_prev`; otherwise the previous command
/// is held for the whole period. `noise` is the process-noise realization on
/// the state block.
pub fn step(
    state: &AugmentedState,
    disc: &Discretization,
    gain: &GainMatrix,
    delivered: bool,
    noise: &Vector6<f64>,
) -> AugmentedState {
    let z = state.as_vector();
    let mut next = if delivered {
        let u = gain * z;
        disc.psi_d * z + disc.phi_d * u
    } else {
        disc.psi_h * z
    };
    for i in 0..6 {
        next[i] += noise[i];
    }
    AugmentedState::from_vector(&next)
}

/// Quadratic Lyapunov value `V(ζ) = ζᵀ P ζ`.
pub fn lyapunov_value(state: &AugmentedState, weight: &Mat9) -> f64 {
    let z = state.as_vector();
    (z.transpose() * weight * z)[(0, 0)]
}

/// Trace of the noise term `tr(P Σ)` restricted to the state block, where
/// process noise enters the augmented dynamics.
fn noise_trace(model: &SystemModel) -> f64 {
    let p = &model.lyapunov_weight;
    let q = &model.noise_cov;
    let mut tr = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            tr += p[(i, j)] * q[(j, i)];
        }
    }
    tr
}

/// Minimum on-time delivery probability Γ that keeps the expected Lyapunov
/// descent `E[V(ζ⁺)] ≤ ρ V(ζ) + tr(P Σ)` satisfied at this state.
///
/// Solving `p V_close + (1 − p) V_open + tr(P Σ) ≤ ρ V + tr(P Σ)` for the
/// smallest admissible `p` gives
/// `Γ = (V_open − ρ V − tr(P Σ)) / (V_open − V_close)`, clamped to
/// `[0, 1 − 1e−9]` so a positive latency budget always remains. When the
/// open- and closed-loop values coincide the ratio is undefined and
/// [`ControlError::DegenerateState`] is returned; callers treat it as Γ = 0.
pub fn success_threshold(
    state: &AugmentedState,
    disc: &Discretization,
    model: &SystemModel,
) -> Result<f64, ControlError> {
    let p = &model.lyapunov_weight;
    let z = state.as_vector();
    let z_close = disc.psi_cl * z;
    let z_open = disc.psi_op * z;
    let v_cur = (z.transpose() * p * z)[(0, 0)];
    let v_close = (z_close.transpose() * p * z_close)[(0, 0)];
    let v_open = (z_open.transpose() * p * z_open)[(0, 0)];
    let gap = v_open - v_close;
    if gap.abs() < DEGENERATE_GAP {
        return Err(ControlError::DegenerateState);
    }
    let raw = (v_open - model.decay_rate * v_cur - noise_trace(model)) / gap;
    Ok(raw.clamp(0.0, THRESHOLD_CEILING))
}

/// Whether delivery probability `p` satisfies the expected Lyapunov descent
/// at this state: `p V_close + (1 − p) V_open ≤ ρ V + tr(P Σ)`.
pub fn descent_holds(
    state: &AugmentedState,
    disc: &Discretization,
    model: &SystemModel,
    p: f64,
) -> bool {
    let w = &model.lyapunov_weight;
    let z = state.as_vector();
    let z_close = disc.psi_cl * z;
    let z_open = disc.psi_op * z;
    let v_cur = (z.transpose() * w * z)[(0, 0)];
    let v_close = (z_close.transpose() * w * z_close)[(0, 0)];
    let v_open = (z_open.transpose() * w * z_open)[(0, 0)];
    p * v_close + (1.0 - p) * v_open <= model.decay_rate * v_cur + noise_trace(model)
}

/// Result of the LQR design: the feedback gain and the Riccati cost-to-go,
/// which doubles as the positive-definite Lyapunov weight.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    pub gain: GainMatrix,
    pub cost_to_go: Mat9,
}

/// Designs a stabilizing feedback gain for the discretized pair
/// `(Ψ_d, Φ_d)` by iterating the discrete Riccati map with identity state
/// and input weights:
///
/// `P ← Ψ_dᵀ P Ψ_d − Ψ_dᵀ P Φ_d (I + Φ_dᵀ P Φ_d)⁻¹ Φ_dᵀ P Ψ_d + I`.
///
/// Converges (max-entry change ≤ 1e−10) iff the pair is stabilizable;
/// otherwise [`ControlError::Unstabilizable`] is raised after 10⁴ sweeps.
/// The returned gain satisfies `K = −(I + Φ_dᵀPΦ_d)⁻¹Φ_dᵀPΨ_d`, so the
/// closed loop is `Ψ_cl = Ψ_d + Φ_d K`.
pub fn design_gain(model: &SystemModel, disc: &Discretization) -> Result<GainDesign, ControlError> {
    if disc.exec_window > model.sampling_period {
        return Err(ControlError::InvalidModel(format!(
            "discretization window {}s does not fit the model's sampling period {}s",
            disc.exec_window, model.sampling_period
        )));
    }
    let a = disc.psi_d;
    let b = disc.phi_d;
    let q = Mat9::identity();
    let r = SMatrix::<f64, 3, 3>::identity();

    let mut p = q;
    let mut residual = f64::INFINITY;
    for iteration in 0..RICCATI_MAX_ITERS {
        let btp = b.transpose() * p;
        let gram = r + btp * b;
        let gram_inv = gram.try_inverse().ok_or(ControlError::Unstabilizable {
            iterations: iteration,
            residual,
        })?;
        let p_next = a.transpose() * p * a - (btp * a).transpose() * gram_inv * (btp * a) + q;
        // Symmetrize to keep round-off from accumulating over many sweeps.
        let p_next = (p_next + p_next.transpose()) * 0.5;
        residual = (p_next - p).abs().max();
        p = p_next;
        if residual <= RICCATI_TOL {
            let btp = b.transpose() * p;
            let gram = r + btp * b;
            let gram_inv = gram.try_inverse().ok_or(ControlError::Unstabilizable {
                iterations: iteration,
                residual,
            })?;
            let gain = -(gram_inv * btp * a);
            return Ok(GainDesign {
                gain,
                cost_to_go: p,
            });
        }
    }
    Err(ControlError::Unstabilizable {
        iterations: RICCATI_MAX_ITERS,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius;
    use proptest::prelude::*;

    fn test_model() -> SystemModel {
        SystemModel::double_integrator(1e-4, 0.95, 0.5).unwrap()
    }

    /// Model with the gain/certificate designed at the given latency.
    fn designed_model(latency: f64) -> (SystemModel, Discretization) {
        let base = test_model();
        let disc = discretize(&base, latency).unwrap();
        let design = design_gain(&base, &disc).unwrap();
        let model = base.with_design(&design);
        let disc = discretize(&model, latency).unwrap();
        (model, disc)
    }

    fn sample_state(seed: u64) -> AugmentedState {
        // Cheap deterministic pseudo-random state for matrix oracles.
        let mut v = [0.0f64; 9];
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        for slot in v.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *slot = ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
        }
        AugmentedState::from_vector(&Vec9::from_row_slice(&v))
    }

    #[test]
    fn discretize_zero_latency_uses_full_window() {
        let model = test_model();
        let disc = discretize(&model, 0.0).unwrap();
        assert_eq!(disc.exec_window, 0.5);
        assert!((disc.phi1).abs().max() < 1e-15);
        assert!((disc.phi0 - disc.phi_hold).abs().max() < 1e-15);
    }

    #[test]
    fn discretize_full_latency_leaves_no_execution_window() {
        let model = test_model();
        let disc = discretize(&model, 0.5).unwrap();
        assert_eq!(disc.exec_window, 0.0);
        assert!((disc.phi0).abs().max() == 0.0);
        assert!((disc.phi1 - disc.phi_hold).abs().max() < 1e-15);
    }

    #[test]
    fn discretize_rejects_latency_beyond_period() {
        let model = test_model();
        match discretize(&model, 0.6) {
            Err(ControlError::InfeasibleLatency { latency, sampling_period }) => {
                assert_eq!(latency, 0.6);
                assert_eq!(sampling_period, 0.5);
            }
            other => panic!("expected infeasible latency, got {other:?}"),
        }
        assert!(matches!(
            discretize(&model, -0.1),
            Err(ControlError::InvalidLatency { .. })
        ));
    }

    #[test]
    fn discretize_double_integrator_matches_closed_forms() {
        // For A = [[0, I], [0, 0]], B = [[0], [I]]:
        //   Ψ = [[I, e I], [0, I]]
        //   ∫_0^t e^{As} B ds = [[t²/2 I], [t I]]
        let model = test_model();
        let latency = 0.2;
        let disc = discretize(&model, latency).unwrap();
        let e = 0.5;
        let w = e - latency;
        for i in 0..3 {
            assert!((disc.psi[(i, i)] - 1.0).abs() < 1e-14);
            assert!((disc.psi[(i, i + 3)] - e).abs() < 1e-14);
            assert!((disc.phi0[(i, i)] - w * w / 2.0).abs() < 1e-12);
            assert!((disc.phi0[(i + 3, i)] - w).abs() < 1e-12);
            assert!((disc.phi_hold[(i, i)] - e * e / 2.0).abs() < 1e-12);
            assert!((disc.phi_hold[(i + 3, i)] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_blocks_are_assembled_exactly() {
        let (model, disc) = designed_model(0.15);
        // Ψ_cl = Ψ_d + Φ_d K must hold as a matrix identity.
        let reassembled = disc.psi_d + disc.phi_d * model.gain;
        assert_eq!(disc.psi_cl, reassembled);
        // Φ⁰ + Φ¹ = Φ_hold to machine precision.
        assert!((disc.phi0 + disc.phi1 - disc.phi_hold).abs().max() < 1e-13);
    }

    #[test]
    fn delivered_step_matches_dense_matvec_oracle() {
        let (model, disc) = designed_model(0.1);
        for seed in 0..20u64 {
            let state = sample_state(seed);
            let next = step(&state, &disc, &model.gain, true, &Vector6::zeros());
            // Oracle: plain dense product with the closed-loop matrix.
            let expect = disc.psi_cl * state.as_vector();
            assert!((next.as_vector() - expect).abs().max() < 1e-12);
            // The fresh command is stored exactly.
            let u = model.gain * state.as_vector();
            assert_eq!(next.u_prev, u);
        }
    }

    #[test]
    fn missed_step_holds_previous_command() {
        let (model, disc) = designed_model(0.1);
        let state = sample_state(7);
        let noise = Vector6::from_element(0.01);
        let next = step(&state, &disc, &model.gain, false, &noise);
        let mut expect = disc.psi_op * state.as_vector();
        for i in 0..6 {
            expect[i] += noise[i];
        }
        assert!((next.as_vector() - expect).abs().max() < 1e-12);
        assert_eq!(next.u_prev, state.u_prev);
    }

    #[test]
    fn lyapunov_value_matches_double_sum_oracle() {
        let (model, _) = designed_model(0.1);
        let state = sample_state(3);
        let z = state.as_vector();
        let mut oracle = 0.0;
        for i in 0..9 {
            for j in 0..9 {
                oracle += z[i] * model.lyapunov_weight[(i, j)] * z[j];
            }
        }
        let v = lyapunov_value(&state, &model.lyapunov_weight);
        assert!((v - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn gain_design_stabilizes_double_integrator() {
        for latency in [0.0, 0.2, 0.45] {
            let (model, disc) = designed_model(latency);
            let rho = spectral_radius(&mat9_to_dyn(&disc.psi_cl)).unwrap();
            assert!(
                rho < 1.0,
                "closed loop must be a contraction, got radius {rho} at latency {latency}"
            );
            assert!(model.lyapunov_weight.cholesky().is_some());
        }
    }

    #[test]
    fn gain_design_satisfies_riccati_fixed_point() {
        let base = test_model();
        let disc = discretize(&base, 0.1).unwrap();
        let design = design_gain(&base, &disc).unwrap();
        let (a, b, p) = (disc.psi_d, disc.phi_d, design.cost_to_go);
        // Oracle: residual of the discrete Riccati equation at the solution.
        let gram = SMatrix::<f64, 3, 3>::identity() + b.transpose() * p * b;
        let residual = a.transpose() * p * a
            - a.transpose() * p * b * gram.try_inverse().unwrap() * b.transpose() * p * a
            + Mat9::identity()
            - p;
        assert!(residual.abs().max() < 1e-8);
        // And the gain formula itself.
        let k_expect = -(gram.try_inverse().unwrap() * b.transpose() * p * a);
        assert!((design.gain - k_expect).abs().max() < 1e-9);
    }

    #[test]
    fn gain_design_rejects_unactuated_system() {
        // Zero input matrix: the marginally stable double-integrator modes can
        // never be moved, so the Riccati iteration must not converge.
        let base = test_model();
        let model = SystemModel::new(
            base.a,
            Mat6x3::zeros(),
            base.noise_cov,
            GainMatrix::zeros(),
            Mat9::identity(),
            base.decay_rate,
            base.sampling_period,
        )
        .unwrap();
        // Zero out the direct actuation channel of the augmented pair as well.
        let mut disc = discretize(&model, 0.1).unwrap();
        disc.phi_d = Mat9x3::zeros();
        assert!(matches!(
            design_gain(&model, &disc),
            Err(ControlError::Unstabilizable { .. })
        ));
    }

    #[test]
    fn threshold_is_zero_when_open_loop_already_decays() {
        // Strongly contracting plant with zero gain and identity weight: the
        // held command decays the state on its own, so no delivery is needed.
        let mut a = Mat6::identity() * -8.0;
        for i in 0..3 {
            a[(i, i + 3)] = 1.0;
        }
        let mut b = Mat6x3::zeros();
        for i in 0..3 {
            b[(i + 3, i)] = 1.0;
        }
        let model = SystemModel::new(
            a,
            b,
            Mat6::zeros(),
            GainMatrix::zeros(),
            Mat9::identity(),
            0.95,
            0.5,
        )
        .unwrap();
        let disc = discretize(&model, 0.1).unwrap();
        // Non-zero in-flight command so the open/closed branches differ.
        let state = AugmentedState::new(Vector6::from_element(1.0), Vector3::from_element(1.0));
        let gamma = success_threshold(&state, &disc, &model).unwrap();
        assert_eq!(gamma, 0.0);
    }

    #[test]
    fn threshold_is_capped_strictly_below_one() {
        // Demand an implausibly strong contraction: the required probability
        // saturates at the ceiling instead of reaching 1.
        let (model, disc) = designed_model(0.2);
        let mut harsh = model.clone();
        harsh.decay_rate = 1e-6;
        let state = AugmentedState::new(Vector6::from_element(5.0), Vector3::zeros());
        let gamma = success_threshold(&state, &disc, &harsh).unwrap();
        assert!(gamma <= 1.0 - 1e-9);
        assert!(gamma > 0.99);
    }

    #[test]
    fn threshold_flags_degenerate_state() {
        // At the origin both branches give V = 0, so the gap vanishes.
        let (model, disc) = designed_model(0.2);
        let state = AugmentedState::zero();
        assert_eq!(
            success_threshold(&state, &disc, &model),
            Err(ControlError::DegenerateState)
        );
    }

    #[test]
    fn threshold_solves_descent_boundary() {
        // Bisection oracle: the smallest p for which descent_holds flips to
        // true must agree with the closed-form threshold (when unclamped).
        let (model, disc) = designed_model(0.25);
        let mut noiseless = model.clone();
        noiseless.noise_cov = Mat6::zeros();
        for seed in [1u64, 9, 42] {
            let state = sample_state(seed);
            let gamma = success_threshold(&state, &disc, &noiseless).unwrap();
            if gamma <= 0.0 || gamma >= 1.0 - 1e-9 {
                continue; // clamped: boundary lies outside [0, 1]
            }
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            if !descent_holds(&state, &disc, &noiseless, hi)
                || descent_holds(&state, &disc, &noiseless, lo)
            {
                continue; // descent not monotone increasing in p at this state
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if descent_holds(&state, &disc, &noiseless, mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((gamma - hi).abs() < 1e-9, "gamma {gamma} vs bisection {hi}");
        }
    }

    #[test]
    fn descent_holds_just_above_threshold_and_fails_just_below() {
        let (model, disc) = designed_model(0.3);
        let state = sample_state(11);
        let gamma = success_threshold(&state, &disc, &model).unwrap();
        assert!(gamma > 1e-3 && gamma < 1.0 - 1e-9, "want an interior case, got {gamma}");
        assert!(descent_holds(&state, &disc, &model, gamma + 1e-9));
        assert!(!descent_holds(&state, &disc, &model, gamma - 1e-6));
    }

    #[test]
    fn rejects_invalid_model_parameters() {
        let base = test_model();
        assert!(matches!(
            SystemModel::new(base.a, base.b, base.noise_cov, base.gain, base.lyapunov_weight, 1.0, 0.5),
            Err(ControlError::InvalidModel(_))
        ));
        assert!(matches!(
            SystemModel::new(base.a, base.b, base.noise_cov, base.gain, base.lyapunov_weight, 0.95, 0.0),
            Err(ControlError::InvalidModel(_))
        ));
        // Indefinite noise covariance.
        let mut bad_q = Mat6::identity();
        bad_q[(0, 0)] = -1.0;
        assert!(matches!(
            SystemModel::new(base.a, base.b, bad_q, base.gain, base.lyapunov_weight, 0.95, 0.5),
            Err(ControlError::InvalidModel(_))
        ));
        // Singular Lyapunov weight.
        let mut bad_p = Mat9::identity();
        bad_p[(8, 8)] = 0.0;
        assert!(matches!(
            SystemModel::new(base.a, base.b, base.noise_cov, base.gain, bad_p, 0.95, 0.5),
            Err(ControlError::InvalidModel(_))
        ));
    }

    fn mat9_to_dyn(m: &Mat9) -> DMatrix<f64> {
        DMatrix::from_column_slice(9, 9, m.as_slice())
    }

    proptest! {
        /// One period of the loop is linear in (state, noise) jointly.
        #[test]
        fn step_is_linear(
            za in proptest::array::uniform9(-10.0f64..10.0),
            zb in proptest::array::uniform9(-10.0f64..10.0),
            na in proptest::array::uniform6(-1.0f64..1.0),
            nb in proptest::array::uniform6(-1.0f64..1.0),
            delivered in proptest::bool::ANY,
        ) {
            let (model, disc) = designed_model(0.2);
            let sa = AugmentedState::from_vector(&Vec9::from_row_slice(&za));
            let sb = AugmentedState::from_vector(&Vec9::from_row_slice(&zb));
            let sum = AugmentedState::from_vector(&(sa.as_vector() + sb.as_vector()));
            let noise_a = Vector6::from_row_slice(&na);
            let noise_b = Vector6::from_row_slice(&nb);
            let lhs = step(&sum, &disc, &model.gain, delivered, &(noise_a + noise_b));
            let rhs = step(&sa, &disc, &model.gain, delivered, &noise_a).as_vector()
                + step(&sb, &disc, &model.gain, delivered, &noise_b).as_vector();
            prop_assert!((lhs.as_vector() - rhs).abs().max() < 1e-9);
        }

        /// With no process noise the threshold only depends on the direction
        /// of the state, not its magnitude.
        #[test]
        fn threshold_is_scale_invariant_without_noise(
            z in proptest::array::uniform9(-5.0f64..5.0),
            scale in 0.1f64..100.0,
        ) {
            let (model, disc) = designed_model(0.2);
            let mut noiseless = model.clone();
            noiseless.noise_cov = Mat6::zeros();
            let state = AugmentedState::from_vector(&Vec9::from_row_slice(&z));
            let scaled = AugmentedState::from_vector(&(state.as_vector() * scale));
            let g1 = success_threshold(&state, &disc, &noiseless);
            let g2 = success_threshold(&scaled, &disc, &noiseless);
            match (g1, g2) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-6),
                (Err(ControlError::DegenerateState), Err(ControlError::DegenerateState)) => {}
                other => prop_assert!(false, "mismatched outcomes {other:?}"),
            }
        }

        /// Round-trip between the structured and flat state representations.
        #[test]
        fn state_vector_round_trip(z in proptest::array::uniform9(-1e6f64..1e6)) {
            let v = Vec9::from_row_slice(&z);
            prop_assert_eq!(AugmentedState::from_vector(&v).as_vector(), v);
        }
    }
}
