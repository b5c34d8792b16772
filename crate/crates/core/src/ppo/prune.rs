//! Dynamic structured pruning: neuron importance scores, a cubic density
//! schedule, threshold selection, and atomic mask updates.
//!
//! Pruning removes whole hidden neurons by zeroing their mask entries. The
//! target density (fraction of hidden neurons kept) decays from `w_init` to
//! `w_target` along a cubic curve; at each pruning event a threshold is
//! derived from the current importance scores and every neuron scoring below
//! it is masked. Masks only ever tighten within a run, and an event that
//! would empty a layer is rejected wholesale.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::net::MaskedNetwork;
use super::PpoError;

/// When and how far pruning proceeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSchedule {
    /// Starting density w1.
    pub w_init: f64,
    /// Final density w2.
    pub w_target: f64,
    /// Epoch t0 of the first pruning event.
    pub start_epoch: usize,
    /// Number of pruning steps M the decay is spread over.
    pub prune_steps: usize,
    /// Epochs ∇ between consecutive pruning events.
    pub frequency: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            w_init: 1.0,
            w_target: 0.5,
            start_epoch: 50,
            prune_steps: 20,
            frequency: 5,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(0.0 <= self.w_target && self.w_target <= self.w_init && self.w_init <= 1.0) {
            return Err(PpoError::InvalidConfig(format!(
                "density must satisfy 0 <= w_target ({}) <= w_init ({}) <= 1",
                self.w_target, self.w_init
            )));
        }
        if self.prune_steps == 0 {
            return Err(PpoError::InvalidConfig(
                "prune_steps must be at least 1".to_string(),
            ));
        }
        if self.frequency == 0 {
            return Err(PpoError::InvalidConfig(
                "frequency must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Whether a pruning event fires at this epoch.
    pub fn fires_at(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch && (epoch - self.start_epoch) % self.frequency == 0
    }
}

/// Target density at an epoch: `w1` before the start epoch, then
/// `w2 + (w1 − w2)·(1 − progress)³` with progress = (t − t0)/(M·∇) clamped
/// to [0, 1]. Exactly `w1` at t0 and exactly `w2` from t0 + M·∇ onward.
pub fn sparsity_schedule(epoch: usize, schedule: &PruneSchedule) -> f64 {
    if epoch < schedule.start_epoch {
        return schedule.w_init;
    }
    let span = (schedule.prune_steps * schedule.frequency) as f64;
    let progress = ((epoch - schedule.start_epoch) as f64 / span).min(1.0);
    schedule.w_target + (schedule.w_init - schedule.w_target) * (1.0 - progress).powi(3)
}

/// How the pruning threshold is derived from the importance scores at a
/// scheduled density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Threshold at the (1 − density) quantile of all scores, so the kept
    /// fraction tracks the schedule regardless of score scale. Default.
    Quantile,
    /// Threshold = (total score)·(1 − density)/(neuron count): linear in the
    /// mean score. Kept fraction depends on the score distribution.
    NormalizedLinear,
    /// Threshold = (total score)·density. Aggressive at any realistic scale;
    /// retained for comparison.
    TotalTimesDensity,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Quantile
    }
}

/// Importance of each neuron in one hidden layer: L1 norm of its incoming
/// weights plus the absolute bias. Zero for fully gated neurons.
pub fn neuron_importance(net: &MaskedNetwork, layer: usize) -> DVector<f64> {
    let l = &net.layers[layer];
    DVector::from_fn(l.weights.nrows(), |j, _| {
        l.weights.row(j).iter().map(|w| w.abs()).sum::<f64>() + l.bias[j].abs()
    })
}

/// Importance scores of every hidden layer of a network.
pub fn all_importances(net: &MaskedNetwork) -> Vec<DVector<f64>> {
    (0..net.masks.len())
        .map(|h| neuron_importance(net, h))
        .collect()
}

/// Threshold φ such that masking `score < φ` realizes the target density
/// under the chosen rule. Density 1 always yields φ = 0 (nothing pruned).
pub fn prune_threshold(scores: &[DVector<f64>], density: f64, rule: ThresholdRule) -> f64 {
    let total_count: usize = scores.iter().map(|s| s.len()).sum();
    if total_count == 0 {
        return 0.0;
    }
    match rule {
        ThresholdRule::Quantile => {
            let keep = (density * total_count as f64).round() as usize;
            if keep >= total_count {
                return 0.0;
            }
            if keep == 0 {
                return f64::INFINITY;
            }
            let mut all: Vec<f64> = scores.iter().flat_map(|s| s.iter().copied()).collect();
            all.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
            all[keep - 1]
        }
        ThresholdRule::NormalizedLinear => {
            let total: f64 = scores.iter().map(|s| s.sum()).sum();
            total * (1.0 - density) / total_count as f64
        }
        ThresholdRule::TotalTimesDensity => {
            let total: f64 = scores.iter().map(|s| s.sum()).sum();
            total * density
        }
    }
}

/// Applies one pruning event: every hidden neuron with importance below the
/// threshold is masked (scores at or above it are kept), masks only tighten,
/// and pruned parameters are zeroed. The update is atomic — if it would
/// empty any layer, nothing changes and [`PpoError::LayerCollapse`] is
/// returned so the caller can skip the event.
pub fn apply_pruning(net: &mut MaskedNetwork, threshold: f64) -> Result<(), PpoError> {
    let mut new_masks = Vec::with_capacity(net.masks.len());
    for (h, mask) in net.masks.iter().enumerate() {
        let scores = neuron_importance(net, h);
        let new_mask = DVector::from_fn(mask.len(), |j, _| {
            if mask[j] != 0.0 && scores[j] >= threshold {
                1.0
            } else {
                0.0
            }
        });
        if new_mask.sum() == 0.0 {
            return Err(PpoError::LayerCollapse { layer: h });
        }
        new_masks.push(new_mask);
    }
    net.masks = new_masks;
    net.apply_masks_to_params();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn schedule() -> PruneSchedule {
        PruneSchedule {
            w_init: 1.0,
            w_target: 0.5,
            start_epoch: 50,
            prune_steps: 20,
            frequency: 5,
        }
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        let s = schedule();
        assert_eq!(sparsity_schedule(50, &s), 1.0);
        assert_eq!(sparsity_schedule(50 + 100, &s), 0.5);
        assert_eq!(sparsity_schedule(50 + 500, &s), 0.5);
    }

    #[test]
    fn schedule_midpoint_follows_the_cubic() {
        let s = schedule();
        let expected = 0.5 + 0.125 * (1.0 - 0.5);
        assert!((sparsity_schedule(100, &s) - expected).abs() < 1e-15);
    }

    #[test]
    fn schedule_before_start_returns_initial_density() {
        let s = schedule();
        assert_eq!(sparsity_schedule(0, &s), 1.0);
        assert_eq!(sparsity_schedule(49, &s), 1.0);
    }

    #[test]
    fn schedule_is_monotone_nonincreasing() {
        let s = schedule();
        let mut prev = f64::INFINITY;
        for epoch in 0..300 {
            let d = sparsity_schedule(epoch, &s);
            assert!(d <= prev + 1e-15, "density rose at epoch {epoch}");
            prev = d;
        }
    }

    #[test]
    fn schedule_validation_rejects_bad_orderings() {
        let mut s = schedule();
        s.w_target = 1.1;
        assert!(s.validate().is_err());
        let mut s = schedule();
        s.w_init = 0.4; // below w_target
        assert!(s.validate().is_err());
        let mut s = schedule();
        s.prune_steps = 0;
        assert!(s.validate().is_err());
        let mut s = schedule();
        s.frequency = 0;
        assert!(s.validate().is_err());
        assert!(schedule().validate().is_ok());
    }

    #[test]
    fn event_epochs_follow_start_and_frequency() {
        let s = schedule();
        assert!(!s.fires_at(49));
        assert!(s.fires_at(50));
        assert!(!s.fires_at(51));
        assert!(s.fires_at(55));
        assert!(s.fires_at(150));
    }

    fn toy_net(seed: u64) -> MaskedNetwork {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        MaskedNetwork::mlp(3, &[6, 4], 1, &mut rng)
    }

    #[test]
    fn importance_matches_double_loop_oracle() {
        let net = toy_net(1);
        for h in 0..2 {
            let scores = neuron_importance(&net, h);
            for j in 0..scores.len() {
                let mut acc = net.layers[h].bias[j].abs();
                for c in 0..net.layers[h].weights.ncols() {
                    acc += net.layers[h].weights[(j, c)].abs();
                }
                assert!((scores[j] - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn importance_trivial_cases() {
        let mut net = toy_net(2);
        net.layers[0].weights.row_mut(0).fill(0.0);
        net.layers[0].bias[0] = 0.0;
        net.layers[0].weights.row_mut(1).fill(0.0);
        net.layers[0].weights[(1, 2)] = -3.0;
        net.layers[0].bias[1] = 0.0;
        let scores = neuron_importance(&net, 0);
        assert_eq!(scores[0], 0.0);
        assert_eq!(scores[1], 3.0);
    }

    #[test]
    fn full_density_never_prunes() {
        let net = toy_net(3);
        let phi = prune_threshold(&all_importances(&net), 1.0, ThresholdRule::Quantile);
        assert_eq!(phi, 0.0);
        let phi = prune_threshold(&all_importances(&net), 1.0, ThresholdRule::NormalizedLinear);
        assert_eq!(phi, 0.0);
        let mut pruned = net.clone();
        apply_pruning(&mut pruned, 0.0).unwrap();
        assert_eq!(pruned.density(), 1.0);
        assert_eq!(pruned, net);
    }

    #[test]
    fn normalized_linear_threshold_is_half_mean_at_half_density() {
        // All scores equal s: φ = (J·s)·(1 − 0.5)/J = s/2.
        let scores = vec![DVector::repeat(10, 2.0)];
        let phi = prune_threshold(&scores, 0.5, ThresholdRule::NormalizedLinear);
        assert!((phi - 1.0).abs() < 1e-15);
        // With every score equal and above φ, nothing is pruned: this rule's
        // kept fraction depends on the spread of the scores, which is why
        // the quantile rule is the default.
    }

    #[test]
    fn quantile_rule_tracks_density_for_uniform_scores() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let scores = vec![DVector::from_fn(2000, |_, _| rng.random_range(0.0..1.0))];
        for density in [0.9, 0.75, 0.5, 0.3, 0.1] {
            let phi = prune_threshold(&scores, density, ThresholdRule::Quantile);
            let kept = scores[0].iter().filter(|&&s| s >= phi).count() as f64 / 2000.0;
            assert!(
                (kept - density).abs() <= 0.05,
                "density {density}: kept {kept}"
            );
        }
    }

    #[test]
    fn single_neuron_kept_iff_score_reaches_threshold() {
        let mut net = toy_net(5);
        net.masks = vec![DVector::repeat(1, 1.0)];
        net.layers = vec![
            crate::ppo::net::Layer {
                weights: nalgebra::DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5]),
                bias: DVector::from_element(1, 0.5),
                activation: crate::ppo::net::Activation::Tanh,
            },
            crate::ppo::net::Layer {
                weights: nalgebra::DMatrix::from_row_slice(1, 1, &[2.0]),
                bias: DVector::zeros(1),
                activation: crate::ppo::net::Activation::Identity,
            },
        ];
        // Importance = |1| + |-1| + |0.5| + |0.5| = 3.0; scores at the
        // threshold survive, scores below it would collapse the layer.
        let mut keep = net.clone();
        apply_pruning(&mut keep, 3.0).unwrap();
        assert_eq!(keep.masks[0][0], 1.0);
        let err = apply_pruning(&mut net, 3.1).unwrap_err();
        assert_eq!(err, PpoError::LayerCollapse { layer: 0 });
    }

    #[test]
    fn collapse_guard_leaves_masks_unchanged() {
        let mut net = toy_net(6);
        let before = net.clone();
        let phi = f64::INFINITY;
        assert!(matches!(
            apply_pruning(&mut net, phi),
            Err(PpoError::LayerCollapse { layer: 0 })
        ));
        assert_eq!(net, before);
    }

    #[test]
    fn masks_are_monotone_and_mask_rule_matches_indicator() {
        let mut net = toy_net(7);
        let scores0 = neuron_importance(&net, 0);
        let scores1 = neuron_importance(&net, 1);
        let phi = prune_threshold(&all_importances(&net), 0.6, ThresholdRule::Quantile);
        apply_pruning(&mut net, phi).unwrap();
        for (h, scores) in [(0usize, &scores0), (1, &scores1)] {
            for j in 0..net.masks[h].len() {
                let expect = if scores[j] >= phi { 1.0 } else { 0.0 };
                assert_eq!(net.masks[h][j], expect, "layer {h} neuron {j}");
            }
        }
        // A later, tighter event never regrows: pruned neurons now score 0.
        let masks_before = net.masks.clone();
        let phi2 = prune_threshold(&all_importances(&net), 0.4, ThresholdRule::Quantile);
        apply_pruning(&mut net, phi2).unwrap();
        for h in 0..2 {
            for j in 0..net.masks[h].len() {
                assert!(net.masks[h][j] <= masks_before[h][j], "regrew {h}/{j}");
            }
        }
    }

    #[test]
    fn pruned_network_matches_its_shrunken_twin() {
        let mut net = toy_net(8);
        let phi = prune_threshold(&all_importances(&net), 0.5, ThresholdRule::Quantile);
        apply_pruning(&mut net, phi).unwrap();
        let small = net.shrunken();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x = nalgebra::DMatrix::from_fn(3, 1, |_, _| rng.random_range(-2.0..2.0));
            let (a, _) = net.forward_batch(&x).unwrap();
            let (b, _) = small.forward_batch(&x).unwrap();
            assert!((a[(0, 0)] - b[(0, 0)]).abs() <= 1e-12);
        }
    }
}
