//! Desk-scale simulator and solver suite for a fleet of quadrotor UAVs whose
//! control loops close over a shared, priced wireless backhaul.
//!
//! The library couples three layers that are usually studied in isolation:
//!
//! 1. **Control** ([`control`], [`linalg`]) — exact discretization of a
//!    linear tracking loop under input delay, an LQR gain design, and a
//!    Lyapunov descent test that turns "does the loop stay stable?" into a
//!    per-step success-probability threshold.
//! 2. **Network** ([`latency`], [`stability`]) — the sensing, communication,
//!    computing, and actuation delays of one loop iteration, and the minimum
//!    bandwidth each loop must buy so that its latency budget is met often
//!    enough to preserve the descent condition.
//! 3. **Market** ([`game`], [`env`], [`ppo`]) — a Stackelberg game in which
//!    each UAV posts a unit price for bandwidth and its users respond with
//!    utility-maximizing demands, plus a reinforcement-learning environment
//!    and a structurally pruned PPO agent that learns the leader's pricing
//!    policy from demand observations alone.
//!
//! [`scenario`] assembles the three layers into a reproducible instance,
//! [`config`] loads experiment descriptions from TOML, and [`experiments`]
//! runs the solver/learner pipelines and writes deterministic CSV/SVG
//! artifacts. The `skymarket` binary exposes all of this on the command line.

pub mod config;
pub mod control;
pub mod env;
pub mod experiments;
pub mod game;
pub mod latency;
pub mod linalg;
pub mod ppo;
pub mod report;
pub mod scenario;
pub mod stability;
