//! Closed-form Stackelberg bandwidth market between UAV leaders and user
//! followers, solved by backward induction.
//!
//! Each user buys bandwidth κ from the single UAV it is associated with,
//! maximizing `ϑ ln(1 + κH) − ϱκ` (log revenue from its delivered data rate
//! minus the price paid); the closed-form best response is `ϑ/ϱ − 1/H`,
//! projected onto `[κ_min, remaining capacity]` where κ_min is the
//! stability floor from [`crate::stability`]. Each UAV, anticipating those
//! reactions, posts the price maximizing `(ϱ − c)(Θ/ϱ − H_n)` subject to two
//! caps: the price must stay low enough that every follower can still afford
//! its stability floor (upper bound) and high enough that aggregate demand
//! fits the sellable capacity (lower bound). The optimum is the unconstrained
//! `√(cΘ/H_n)` clamped to that interval, yielding a three-case solution.
//!
//! **Units.** The market quotes bandwidth in MHz (so prices and demands are
//! O(1) numbers); the physical layers below work in Hz. Conversion happens
//! exactly once, in [`market_inputs`].

use std::collections::BTreeSet;

use thiserror::Error;

use crate::control::ControlError;
use crate::latency::{self, ChannelParams, LatencyError, UavNode, UserDevice};
use crate::scenario::Scenario;
use crate::stability::{self, StabilityError};

/// One market unit of bandwidth, in Hz.
pub const MARKET_UNIT_HZ: f64 = 1e6;

/// Errors raised by the market layer.
#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    /// An operation that needs at least one follower received none.
    #[error("market has no followers")]
    EmptyMarket,
    /// Posted prices must be strictly positive.
    #[error("price must be positive, got {price}")]
    InvalidPrice { price: f64 },
    /// Structural misuse of an operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A follower's stability floor exceeds what the UAV can still sell.
    #[error("stability floor {kappa_min} MHz exceeds remaining capacity {remaining_cap} MHz")]
    InfeasibleAllocation { kappa_min: f64, remaining_cap: f64 },
    /// The stability cap on the price lies below the capacity floor.
    #[error("empty feasible price region: lower bound {lower} exceeds upper bound {upper}")]
    EmptyFeasibleRegion { lower: f64, upper: f64 },
    /// One or more UAVs cannot serve their users at any price.
    #[error("scenario infeasible for UAV(s) {uavs:?}")]
    ScenarioInfeasible { uavs: Vec<usize> },
    /// Propagated stability-layer failure.
    #[error(transparent)]
    Stability(#[from] StabilityError),
    /// Propagated latency-layer failure.
    #[error(transparent)]
    Latency(#[from] LatencyError),
    /// Propagated control-layer failure.
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// A user as the market sees it: association, preference, link quality, and
/// the bandwidth floor its control loop needs. Bandwidth in MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerView {
    pub user_idx: usize,
    /// The single UAV this user buys from (β_{i,n} = 1).
    pub uav_idx: usize,
    /// Task urgency weight ϑ.
    pub urgency: f64,
    /// Spectral efficiency H = log₂(1 + SNR), bit/s/Hz.
    pub spectral_eff: f64,
    /// Stability floor κ_min in MHz.
    pub kappa_min: f64,
    /// Delivery probability the floor was derived from (diagnostic).
    pub gamma: f64,
}

/// Aggregated view of one UAV's market. Bandwidth in MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderAggregates {
    pub uav_idx: usize,
    /// Θ = Σ ϑ over served users.
    pub theta_sum: f64,
    /// H_n = Σ 1/H over served users.
    pub inv_eff_sum: f64,
    /// Marginal cost c per MHz served.
    pub unit_cost: f64,
    /// Sellable capacity κ_total in MHz.
    pub capacity: f64,
    /// Feasible price interval (ϱ̲, ϱ̄).
    pub price_caps: (f64, f64),
}

/// Market-ready digest of a scenario: association plus follower views.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInputs {
    /// Per-user serving UAV index.
    pub association: Vec<usize>,
    /// Per-user market view, indexed like `Scenario::users`.
    pub followers: Vec<FollowerView>,
    /// Served user indices per UAV, ascending.
    pub by_uav: Vec<Vec<usize>>,
}

/// Which constraint (if any) binds the posted equilibrium price.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceCase {
    /// The unconstrained profit maximizer is feasible.
    Interior,
    /// Price capped from above so every follower still affords its floor.
    StabilityCapped,
    /// Price floored from below so aggregate demand fits capacity.
    CapacityFloored,
}

impl PriceCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            PriceCase::Interior => "interior",
            PriceCase::StabilityCapped => "stability-capped",
            PriceCase::CapacityFloored => "capacity-floored",
        }
    }
}

/// Equilibrium outcome for one UAV. An idle UAV (no served users) posts its
/// unit cost, earns zero, and carries zeroed aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct UavOutcome {
    pub uav_idx: usize,
    pub price: f64,
    pub case: PriceCase,
    pub leader_utility: f64,
    pub aggregates: LeaderAggregates,
    /// Served user indices, ascending.
    pub served: Vec<usize>,
}

/// Equilibrium outcome for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserOutcome {
    pub user_idx: usize,
    pub uav_idx: usize,
    /// Purchased bandwidth κ* in MHz.
    pub demand: f64,
    /// Stability floor κ_min in MHz.
    pub kappa_min: f64,
    pub spectral_eff: f64,
    pub gamma: f64,
    /// Price paid per MHz (the serving UAV's posted price).
    pub price: f64,
    pub follower_utility: f64,
}

/// Full Stackelberg equilibrium of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub uavs: Vec<UavOutcome>,
    pub users: Vec<UserOutcome>,
}

/// Assigns each user to the UAV with the strongest received SNR; ties break
/// to the lowest UAV index.
pub fn associate(
    users: &[UserDevice],
    uavs: &[UavNode],
    params: &ChannelParams,
) -> Result<Vec<usize>, LatencyError> {
    if uavs.is_empty() {
        return Err(LatencyError::InvalidArgument(
            "association requires at least one UAV".to_string(),
        ));
    }
    let mut assoc = Vec::with_capacity(users.len());
    for user in users {
        let mut best = 0usize;
        let mut best_snr = f64::NEG_INFINITY;
        for (n, uav) in uavs.iter().enumerate() {
            let s = latency::snr(user, uav, params)?;
            if s > best_snr {
                best_snr = s;
                best = n;
            }
        }
        assoc.push(best);
    }
    Ok(assoc)
}

/// Follower utility `ϑ ln(1 + κH) − ϱκ` for a purchase of κ MHz.
pub fn follower_utility(kappa: f64, urgency: f64, spectral_eff: f64, price: f64) -> f64 {
    urgency * (1.0 + kappa * spectral_eff).ln() - price * kappa
}

/// Closed-form follower best response `ϑ/ϱ − 1/H`, projected onto
/// `[κ_min, remaining_cap]`. Strict concavity of the utility makes the
/// projection the constrained optimum.
pub fn follower_best_response(
    urgency: f64,
    spectral_eff: f64,
    price: f64,
    kappa_min: f64,
    remaining_cap: f64,
) -> Result<f64, GameError> {
    if !(price > 0.0) {
        return Err(GameError::InvalidPrice { price });
    }
    if !(spectral_eff > 0.0) {
        return Err(GameError::InvalidArgument(format!(
            "spectral efficiency must be positive, got {spectral_eff}"
        )));
    }
    if kappa_min > remaining_cap {
        return Err(GameError::InfeasibleAllocation {
            kappa_min,
            remaining_cap,
        });
    }
    let raw = urgency / price - 1.0 / spectral_eff;
    Ok(raw.clamp(kappa_min, remaining_cap))
}

/// Feasible price interval for one UAV's market: the upper cap keeps every
/// follower's unconstrained response at or above its stability floor
/// (`ϱ ≤ min_i ϑ_i/(κ_i^min + 1/H_i)`); the lower cap keeps aggregate
/// unconstrained demand within capacity (`ϱ ≥ Θ/(κ_total + H_n)`).
pub fn price_bounds(followers: &[&FollowerView], capacity: f64) -> Result<(f64, f64), GameError> {
    if followers.is_empty() {
        return Err(GameError::EmptyMarket);
    }
    let mut upper = f64::INFINITY;
    let mut theta = 0.0;
    let mut inv_eff = 0.0;
    for f in followers {
        upper = upper.min(f.urgency / (f.kappa_min + 1.0 / f.spectral_eff));
        theta += f.urgency;
        inv_eff += 1.0 / f.spectral_eff;
    }
    let lower = theta / (capacity + inv_eff);
    if lower > upper {
        return Err(GameError::EmptyFeasibleRegion { lower, upper });
    }
    Ok((lower, upper))
}

/// Three-case optimal leader price: the unconstrained profit maximizer
/// `ϱ¹ = √(cΘ/H_n)` clamped into the feasible interval.
pub fn optimal_price(
    unit_cost: f64,
    theta_sum: f64,
    inv_eff_sum: f64,
    bounds: (f64, f64),
) -> Result<(f64, PriceCase), GameError> {
    if !(theta_sum > 0.0) || !(inv_eff_sum > 0.0) {
        return Err(GameError::EmptyMarket);
    }
    if !(unit_cost > 0.0) {
        return Err(GameError::InvalidArgument(format!(
            "unit cost must be positive, got {unit_cost}"
        )));
    }
    let (lower, upper) = bounds;
    let unconstrained = (unit_cost * theta_sum / inv_eff_sum).sqrt();
    Ok(if unconstrained < lower {
        (lower, PriceCase::CapacityFloored)
    } else if unconstrained > upper {
        (upper, PriceCase::StabilityCapped)
    } else {
        (unconstrained, PriceCase::Interior)
    })
}

/// Leader profit `Σ (ϱ − c) κ_i` over the served demands.
pub fn leader_utility(price: f64, unit_cost: f64, demands: &[f64]) -> f64 {
    (price - unit_cost) * demands.iter().sum::<f64>()
}

/// Best responses of one UAV's followers at a posted price, with stability
/// floors reserved up front and the remaining capacity granted in user-index
/// order. Every demand lands in `[κ_min, capacity share]` and the total never
/// exceeds capacity.
pub fn project_demands(
    followers: &[&FollowerView],
    price: f64,
    capacity: f64,
) -> Result<Vec<f64>, GameError> {
    let floor_total: f64 = followers.iter().map(|f| f.kappa_min).sum();
    if floor_total > capacity {
        return Err(GameError::InfeasibleAllocation {
            kappa_min: floor_total,
            remaining_cap: capacity,
        });
    }
    let mut headroom = capacity - floor_total;
    let mut demands = Vec::with_capacity(followers.len());
    for f in followers {
        let cap_i = f.kappa_min + headroom;
        let demand = follower_best_response(f.urgency, f.spectral_eff, price, f.kappa_min, cap_i)?;
        // Guard the running headroom against cancellation drift so later
        // floors never appear infeasible by an ulp.
        headroom = (headroom - (demand - f.kappa_min)).max(0.0);
        demands.push(demand);
    }
    Ok(demands)
}

/// Derives the market view of a scenario: SNR-based association, stability
/// floors via the Γ → budget → κ_min pipeline (evaluated at each pair's
/// initial state and fixed latency), and the Hz → MHz unit conversion.
///
/// Fails with [`GameError::ScenarioInfeasible`] when any served pair has no
/// latency budget left or any UAV's floors already exceed its capacity.
pub fn market_inputs(scenario: &Scenario) -> Result<MarketInputs, GameError> {
    let association = associate(&scenario.users, &scenario.uavs, &scenario.channel)?;
    let mut followers = Vec::with_capacity(scenario.users.len());
    let mut infeasible: BTreeSet<usize> = BTreeSet::new();

    for (i, (&n, user)) in association.iter().zip(&scenario.users).enumerate() {
        let uav = &scenario.uavs[n];
        let disc = scenario.pair_discretization(i, n)?;
        let state = scenario.pair_state(i, n);
        let report =
            stability::stability_pipeline(&state, &disc, &scenario.model, user, uav, &scenario.channel)?;
        let snr = latency::snr(user, uav, &scenario.channel)?;
        let kappa_min = match report.min_bandwidth_hz {
            Some(hz) => hz / MARKET_UNIT_HZ,
            None => {
                infeasible.insert(n);
                f64::INFINITY
            }
        };
        followers.push(FollowerView {
            user_idx: i,
            uav_idx: n,
            urgency: user.urgency,
            spectral_eff: latency::spectral_efficiency(snr),
            kappa_min,
            gamma: report.gamma,
        });
    }

    let mut by_uav: Vec<Vec<usize>> = vec![Vec::new(); scenario.uavs.len()];
    for f in &followers {
        by_uav[f.uav_idx].push(f.user_idx);
    }
    for (n, served) in by_uav.iter().enumerate() {
        let floor_total: f64 = served.iter().map(|&i| followers[i].kappa_min).sum();
        let capacity = scenario.uavs[n].bandwidth_total_hz / MARKET_UNIT_HZ;
        if floor_total > capacity {
            infeasible.insert(n);
        }
    }
    if !infeasible.is_empty() {
        return Err(GameError::ScenarioInfeasible {
            uavs: infeasible.into_iter().collect(),
        });
    }
    Ok(MarketInputs {
        association,
        followers,
        by_uav,
    })
}

/// Solves the full Stackelberg equilibrium of a scenario by backward
/// induction: association → stability floors → per-UAV aggregates and price
/// bounds → three-case optimal prices → projected follower demands →
/// utilities.
pub fn solve_equilibrium(scenario: &Scenario) -> Result<Equilibrium, GameError> {
    let inputs = market_inputs(scenario)?;
    solve_with_inputs(scenario, &inputs)
}

/// Equilibrium solve reusing precomputed market inputs (used by the learning
/// environment to stay bit-consistent with the solver).
pub fn solve_with_inputs(
    scenario: &Scenario,
    inputs: &MarketInputs,
) -> Result<Equilibrium, GameError> {
    let mut empty_region: BTreeSet<usize> = BTreeSet::new();
    let mut uav_outcomes = Vec::with_capacity(scenario.uavs.len());
    let mut user_outcomes: Vec<Option<UserOutcome>> = vec![None; scenario.users.len()];

    for (n, uav) in scenario.uavs.iter().enumerate() {
        let served = &inputs.by_uav[n];
        let capacity = uav.bandwidth_total_hz / MARKET_UNIT_HZ;
        if served.is_empty() {
            uav_outcomes.push(UavOutcome {
                uav_idx: n,
                price: uav.unit_cost,
                case: PriceCase::Interior,
                leader_utility: 0.0,
                aggregates: LeaderAggregates {
                    uav_idx: n,
                    theta_sum: 0.0,
                    inv_eff_sum: 0.0,
                    unit_cost: uav.unit_cost,
                    capacity,
                    price_caps: (uav.unit_cost, uav.unit_cost),
                },
                served: Vec::new(),
            });
            continue;
        }
        let views: Vec<&FollowerView> = served.iter().map(|&i| &inputs.followers[i]).collect();
        let bounds = match price_bounds(&views, capacity) {
            Ok(b) => b,
            Err(GameError::EmptyFeasibleRegion { .. }) => {
                empty_region.insert(n);
                continue;
            }
            Err(other) => return Err(other),
        };
        let theta_sum: f64 = views.iter().map(|f| f.urgency).sum();
        let inv_eff_sum: f64 = views.iter().map(|f| 1.0 / f.spectral_eff).sum();
        let (price, case) = optimal_price(uav.unit_cost, theta_sum, inv_eff_sum, bounds)?;
        let demands = project_demands(&views, price, capacity)?;
        for (f, &demand) in views.iter().zip(&demands) {
            user_outcomes[f.user_idx] = Some(UserOutcome {
                user_idx: f.user_idx,
                uav_idx: n,
                demand,
                kappa_min: f.kappa_min,
                spectral_eff: f.spectral_eff,
                gamma: f.gamma,
                price,
                follower_utility: follower_utility(demand, f.urgency, f.spectral_eff, price),
            });
        }
        uav_outcomes.push(UavOutcome {
            uav_idx: n,
            price,
            case,
            leader_utility: leader_utility(price, uav.unit_cost, &demands),
            aggregates: LeaderAggregates {
                uav_idx: n,
                theta_sum,
                inv_eff_sum,
                unit_cost: uav.unit_cost,
                capacity,
                price_caps: bounds,
            },
            served: served.clone(),
        });
    }

    if !empty_region.is_empty() {
        return Err(GameError::ScenarioInfeasible {
            uavs: empty_region.into_iter().collect(),
        });
    }
    let users = user_outcomes
        .into_iter()
        .map(|o| o.expect("every user is served by its associated UAV"))
        .collect();
    Ok(Equilibrium {
        uavs: uav_outcomes,
        users,
    })
}

impl Equilibrium {
    /// Re-checks every equilibrium invariant; returns the first violation.
    /// Run before serializing outcomes so no inconsistent row is ever written.
    pub fn validate(&self) -> Result<(), String> {
        const TOL: f64 = 1e-9;
        for uav in &self.uavs {
            if uav.served.is_empty() {
                continue;
            }
            let served: Vec<&UserOutcome> = self
                .users
                .iter()
                .filter(|u| u.uav_idx == uav.uav_idx)
                .collect();
            let total: f64 = served.iter().map(|u| u.demand).sum();
            if total > uav.aggregates.capacity + TOL {
                return Err(format!(
                    "UAV {}: demand total {} exceeds capacity {}",
                    uav.uav_idx, total, uav.aggregates.capacity
                ));
            }
            let (lower, upper) = uav.aggregates.price_caps;
            if uav.price < lower - TOL || uav.price > upper + TOL {
                return Err(format!(
                    "UAV {}: price {} outside bounds [{}, {}]",
                    uav.uav_idx, uav.price, lower, upper
                ));
            }
            let utility = (uav.price - uav.aggregates.unit_cost) * total;
            if (utility - uav.leader_utility).abs() > TOL * utility.abs().max(1.0) {
                return Err(format!(
                    "UAV {}: stored utility {} does not match recomputed {}",
                    uav.uav_idx, uav.leader_utility, utility
                ));
            }
        }
        for user in &self.users {
            if user.demand < user.kappa_min - TOL {
                return Err(format!(
                    "user {}: demand {} below stability floor {}",
                    user.user_idx, user.demand, user.kappa_min
                ));
            }
        }
        Ok(())
    }
}
