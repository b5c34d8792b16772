//! Baseline pricing policies: a myopic greedy fitter and a uniform-random
//! pricer. Both act on the same observation windows the learner sees.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::env::Observation;

/// Myopic greedy pricer. It fits the reciprocal demand model
/// `D(ϱ) = Θ̂/ϱ` through the single most recent traded (price, demand)
/// pair, then grid-searches the price maximizing the predicted immediate
/// profit `(ϱ − c)·max(D(ϱ), 0)`. One observation identifies only one
/// demand parameter, so the model has no satiation term — which makes the
/// predicted profit increase with price and the pricer sit at the ceiling,
/// where the real (satiating) demand collapses to the stability floors.
/// With no usable history it falls back to the interval midpoint.
/// Deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPricer {
    pub unit_cost: f64,
    pub price_floor: f64,
    pub price_ceiling: f64,
    /// Number of candidate prices evaluated per decision.
    pub grid_points: usize,
}

impl GreedyPricer {
    pub fn new(unit_cost: f64, price_floor: f64, price_ceiling: f64) -> Self {
        GreedyPricer {
            unit_cost,
            price_floor,
            price_ceiling,
            grid_points: 100,
        }
    }

    /// Picks a price from the observation window.
    pub fn act(&self, obs: &Observation) -> f64 {
        // Most recent entry actually traded: positive price and demand.
        let last = obs
            .window
            .iter()
            .rev()
            .find(|&&(p, d)| p > 0.0 && d > 0.0);
        let Some(&(p1, d1)) = last else {
            return 0.5 * (self.price_floor + self.price_ceiling);
        };
        let theta = d1 * p1;

        let lo = self.price_floor.max(1e-6);
        let hi = self.price_ceiling;
        let mut best_price = lo;
        let mut best_profit = f64::NEG_INFINITY;
        for j in 0..self.grid_points {
            let p = lo + (hi - lo) * j as f64 / (self.grid_points - 1) as f64;
            let profit = (p - self.unit_cost) * (theta / p).max(0.0);
            if profit > best_profit {
                best_profit = profit;
                best_price = p;
            }
        }
        best_price
    }
}

/// Uniform-random pricer over the admissible interval, seeded.
#[derive(Debug, Clone)]
pub struct RandomPricer {
    rng: ChaCha12Rng,
    pub price_floor: f64,
    pub price_ceiling: f64,
}

impl RandomPricer {
    pub fn new(seed: u64, price_floor: f64, price_ceiling: f64) -> Self {
        RandomPricer {
            rng: ChaCha12Rng::seed_from_u64(seed),
            price_floor,
            price_ceiling,
        }
    }

    pub fn act(&mut self) -> f64 {
        if self.price_floor == self.price_ceiling {
            return self.price_floor;
        }
        self.rng.random_range(self.price_floor..self.price_ceiling)
    }
}
