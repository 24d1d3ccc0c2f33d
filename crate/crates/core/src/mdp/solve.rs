use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sup_distance, PolicyTable, TabularMdp, ValueVector};
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, seeded};

/// `r(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`.
#[inline]
pub fn q_value(mdp: &TabularMdp, v: &[f64], s: usize, a: usize) -> f64 {
    let expected: f64 = mdp.kernel_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
    mdp.reward(s, a) + mdp.discount() * expected
}

/// One synchronous sweep of the classical Bellman optimality operator.
pub fn bellman_apply(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    (0..mdp.num_states())
        .map(|s| {
            (0..mdp.num_actions())
                .map(|a| q_value(mdp, v, s, a))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueIterationResult {
    pub values: ValueVector,
    pub iterations: usize,
    /// Sup-norm difference of the last two iterates.
    pub residual: f64,
}

/// Classical value iteration from `V = 0`.
///
/// Stops once `||V_{n+1} - V_n||∞ ≤ tol (1-γ)/γ`, which puts the returned
/// iterate within `tol` of the fixed point.
pub fn classical_value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let gamma = mdp.discount();
    let threshold = tol * (1.0 - gamma) / gamma;
    let mut v = vec![0.0; mdp.num_states()];
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iters {
        let next = bellman_apply(mdp, &v);
        residual = sup_distance(&next, &v);
        v = next;
        if residual <= threshold {
            return Ok(ValueIterationResult {
                values: ValueVector::new(v),
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Greedy one-step policy; ties go to the lowest action index.
pub fn greedy_policy(mdp: &TabularMdp, v: &[f64]) -> Result<PolicyTable> {
    if v.len() != mdp.num_states() {
        return Err(Error::ShapeMismatch(format!(
            "value vector has {} entries for {} states",
            v.len(),
            mdp.num_states()
        )));
    }
    let actions = (0..mdp.num_states())
        .map(|s| {
            let mut best = 0;
            let mut best_q = q_value(mdp, v, s, 0);
            for a in 1..mdp.num_actions() {
                let q = q_value(mdp, v, s, a);
                if q > best_q {
                    best = a;
                    best_q = q;
                }
            }
            best
        })
        .collect();
    Ok(PolicyTable::Deterministic(actions))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

impl RolloutStats {
    pub(crate) fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        RolloutStats {
            mean,
            std_error,
            episodes: n,
        }
    }
}

/// Monte-Carlo estimate of `E[Σ_{t<horizon} γ^t r(s_t, a_t)]` from `s0`.
pub fn rollout_return(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    s0: usize,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<RolloutStats> {
    if horizon == 0 || episodes == 0 {
        return Err(Error::invalid("horizon/episodes", "must be at least 1"));
    }
    if s0 >= mdp.num_states() {
        return Err(Error::invalid("s0", "state out of range"));
    }
    if policy.num_states() != mdp.num_states() {
        return Err(Error::ShapeMismatch("policy covers a different state count".into()));
    }
    policy.check(mdp.num_actions())?;

    let mut rng = seeded(seed);
    let gamma = mdp.discount();
    let samples: Vec<f64> = (0..episodes)
        .map(|_| {
            let mut s = s0;
            let mut total = 0.0;
            let mut weight = 1.0;
            for _ in 0..horizon {
                let a = match policy {
                    PolicyTable::Deterministic(actions) => actions[s],
                    PolicyTable::Stochastic(rows) => {
                        sample_categorical(&rows[s], rng.random::<f64>())
                    }
                };
                total += weight * mdp.reward(s, a);
                weight *= gamma;
                s = sample_categorical(mdp.kernel_row(s, a), rng.random::<f64>());
            }
            total
        })
        .collect();
    Ok(RolloutStats::from_samples(&samples))
}
