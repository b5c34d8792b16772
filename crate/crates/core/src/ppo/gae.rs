//! Generalized advantage estimation over one truncated episode.

/// Computes GAE advantages: `Â_t = Σ_l (γλ)^l δ_{t+l}` with TD errors
/// `δ_t = r_t + γ·V(s_{t+1}) − V(s_t)`, truncated at the episode end where
/// `V(s_T)` is `bootstrap_value`. `rewards` and `values` must be aligned;
/// the returned advantages have the same length.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    assert_eq!(
        rewards.len(),
        values.len(),
        "rewards and values must be aligned"
    );
    let mut advantages = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let next_value = if t + 1 < values.len() {
            values[t + 1]
        } else {
            bootstrap_value
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        advantages[t] = running;
    }
    advantages
}

/// Empirical returns consistent with the advantages: `R_t = Â_t + V(s_t)`.
pub fn returns(advantages: &[f64], values: &[f64]) -> Vec<f64> {
    advantages
        .iter()
        .zip(values)
        .map(|(a, v)| a + v)
        .collect()
}

/// Normalizes a slice to zero mean and unit variance in place; a batch with
/// (near-)zero spread is left centered only.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-12 {
            *v /= std;
        }
    }
}
