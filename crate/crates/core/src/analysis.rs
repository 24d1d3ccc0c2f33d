//! How much predictions are worth: the offline oracle value `V_off,k`, the
//! Bellman-Jensen gap `Δ = V_off - V*_MDP`, the three loss terms of the
//! suboptimality bound, and horizon sweeps of the Bayesian value.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{classical_value_iteration, TabularMdp};
use crate::planner::{BayesOperator, ScenarioSet};
use crate::prediction::{NoiseChannel, PredictionOracle, PredictionSpec};
use crate::rng::{derive_seed, sample_categorical, seeded};

const GAP_MAX_ITERS: usize = 1_000_000;

/// Monte-Carlo estimate of the truncated offline value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineEstimate {
    pub values: Vec<f64>,
    pub std_error: Vec<f64>,
    pub k: usize,
    pub realizations: usize,
}

/// Per-state mean and standard error of equally sized sample rows.
pub(crate) fn column_stats(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let width = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; width];
    for row in samples {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let std_error = if samples.len() > 1 {
        let mut var = vec![0.0; width];
        for row in samples {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter().map(|v| (v / (n - 1.0) / n).sqrt()).collect()
    } else {
        vec![0.0; width]
    };
    (mean, std_error)
}

/// `V_off,k(s)`: the average over sampled full realizations of the best
/// `k`-step return when every transition outcome is known in advance.
///
/// Each realization fixes one successor per `(s, a)` per step, which makes
/// the horizon deterministic; backward DP from `V_k = 0` solves it exactly.
pub fn offline_oracle_value(mdp: &TabularMdp, k: usize, realizations: usize, seed: u64) -> Result<OfflineEstimate> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if realizations == 0 {
        return Err(Error::invalid("realizations", "must be at least 1"));
    }
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    let samples: Vec<Vec<f64>> = (0..realizations)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, &format!("offline-realization-{i}")));
            let mut next = vec![0.0; ns];
            let mut current = vec![0.0; ns];
            // Steps are i.i.d., so drawing them in reverse order is harmless.
            for _ in 0..k {
                for (s, out) in current.iter_mut().enumerate() {
                    *out = (0..na)
                        .map(|a| {
                            let succ = sample_categorical(mdp.kernel_row(s, a), rng.random::<f64>());
                            mdp.reward(s, a) + gamma * next[succ]
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                }
                std::mem::swap(&mut next, &mut current);
            }
            next
        })
        .collect();
    let (values, std_error) = column_stats(&samples);
    Ok(OfflineEstimate {
        values,
        std_error,
        k,
        realizations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub v_off: Vec<f64>,
    pub v_mdp: Vec<f64>,
    /// `v_off - v_mdp` entrywise.
    pub delta: Vec<f64>,
    /// `γ^k / (1-γ)`: how far `V_off,k` may sit below the untruncated value.
    pub truncation_bound: f64,
    pub mc_stderr: Vec<f64>,
    pub k_used: usize,
    pub realizations_used: usize,
}

/// Maximal Bellman-Jensen gap per state.
pub fn bellman_jensen_gap(
    mdp: &TabularMdp,
    k: usize,
    realizations: usize,
    tol: f64,
    seed: u64,
) -> Result<GapReport> {
    let offline = offline_oracle_value(mdp, k, realizations, seed)?;
    let v_mdp = classical_value_iteration(mdp, tol, GAP_MAX_ITERS)?.values.into_inner();
    let delta = offline.values.iter().zip(&v_mdp).map(|(o, m)| o - m).collect();
    Ok(GapReport {
        delta,
        v_off: offline.values,
        v_mdp,
        truncation_bound: mdp.discount().powi(k as i32) / (1.0 - mdp.discount()),
        mc_stderr: offline.std_error,
        k_used: k,
        realizations_used: realizations,
    })
}

/// Constants of the suboptimality bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub c1: f64,
    pub c2: f64,
    /// Sub-Gaussian proxy of reward trajectories.
    pub theta_max_sq: f64,
    /// Prediction errors `ε_1..ε_K`.
    pub eps_per_step: Vec<f64>,
    pub tail_truncation: usize,
}

impl BoundParams {
    /// `θ²_max = 1/(1-γ)²` and a 200-term tail, unit constants, no error.
    pub fn with_defaults(gamma: f64, horizon: usize) -> Self {
        BoundParams {
            c1: 1.0,
            c2: 1.0,
            theta_max_sq: 1.0 / ((1.0 - gamma) * (1.0 - gamma)),
            eps_per_step: vec![0.0; horizon],
            tail_truncation: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Loss from the finite prediction window.
    pub a1: f64,
    /// Loss from prediction error.
    pub a2: f64,
    /// Loss from partial action predictability, truncated at the tail.
    pub a3: f64,
    pub total: f64,
    /// `γ^{T+1}/(1-γ) · sqrt(log|A| · θ²_max · (T+2))`, the neglected tail of
    /// the `a3` series before scaling by `c2`; zero when `A⁻ = A`.
    pub a3_tail_remainder: f64,
}

/// `log(|A|^{t+1} - |A⁻|^{t+1} + 1)` without forming the powers.
fn partial_log_term(num_actions: usize, num_predictable: usize, t: usize) -> f64 {
    if num_predictable == num_actions {
        return 0.0;
    }
    let n = (t + 1) as f64;
    let a = num_actions as f64;
    let ratio = num_predictable as f64 / a;
    n * a.ln() + (a.powf(-n) - ratio.powf(n)).ln_1p()
}

pub fn evaluate_bound(
    params: &BoundParams,
    gamma: f64,
    horizon: usize,
    num_actions: usize,
    num_predictable: usize,
) -> Result<BoundReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma", "must lie in (0,1)"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon", "K must be at least 1"));
    }
    if num_actions == 0 || num_predictable > num_actions {
        return Err(Error::invalid("num_predictable", "need 0 ≤ |A⁻| ≤ |A| and |A| ≥ 1"));
    }
    for (field, value) in [("c1", params.c1), ("c2", params.c2), ("theta_max_sq", params.theta_max_sq)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::invalid(field, "must be positive"));
        }
    }
    if params.eps_per_step.len() != horizon {
        return Err(Error::invalid(
            "eps_per_step",
            format!("expected {horizon} entries, found {}", params.eps_per_step.len()),
        ));
    }
    if params.eps_per_step.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::invalid("eps_per_step", "entries must lie in [0,1]"));
    }
    if params.tail_truncation == 0 {
        return Err(Error::invalid("tail_truncation", "must be at least 1"));
    }

    let k = horizon as f64;
    let gamma_k = gamma.powi(horizon as i32);
    let log_a = (num_actions as f64).ln();

    let a1 = params.c1 * gamma_k * (k * log_a).sqrt()
        / ((1.0 - gamma).powf(1.2) * (1.0 - gamma_k * gamma_k));

    let weighted_eps: f64 = params
        .eps_per_step
        .iter()
        .enumerate()
        .map(|(j, e)| gamma.powi(j as i32 + 1) * e)
        .sum();
    let a2 = weighted_eps / ((1.0 - gamma) * (1.0 - gamma_k));

    let series: f64 = (1..=params.tail_truncation)
        .map(|t| {
            gamma.powi(t as i32) * (partial_log_term(num_actions, num_predictable, t) * params.theta_max_sq).sqrt()
        })
        .sum();
    let a3 = params.c2 * series;
    let tail = params.tail_truncation as f64;
    let a3_tail_remainder = if num_predictable == num_actions {
        0.0
    } else {
        gamma.powf(tail + 1.0) / (1.0 - gamma) * (log_a * params.theta_max_sq * (tail + 2.0)).sqrt()
    };

    Ok(BoundReport {
        a1,
        a2,
        a3,
        total: a1 + a2 + a3,
        a3_tail_remainder,
    })
}

/// Settings of a horizon sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub horizons: Vec<usize>,
    /// Accurate batches drawn per horizon.
    pub scenarios: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Horizon and realization count of the `V_off` reference; `None` skips it.
    pub offline_reference: Option<(usize, usize)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub values: Vec<f64>,
    /// Per-state standard error of the scenario plan values at the fixed point.
    pub std_error: Vec<f64>,
    pub mean_value: f64,
    /// Mean over states of `(V_K - V_MDP) / V_MDP`.
    pub mean_improvement: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub v_mdp: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub v_off: Option<OfflineEstimate>,
    /// States with the lowest and highest `V_MDP` (first on ties).
    pub lowest_state: usize,
    pub highest_state: usize,
}

impl SweepReport {
    /// Relative improvement over `V_MDP` at one state, per horizon.
    pub fn state_trace(&self, s: usize) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| relative_gain(p.values[s], self.v_mdp[s]))
            .collect()
    }
}

fn relative_gain(value: f64, baseline: f64) -> f64 {
    if baseline > 0.0 {
        (value - baseline) / baseline
    } else {
        0.0
    }
}

/// Accurate full-coverage scenario set drawn from the kernel.
pub fn accurate_scenarios(mdp: &TabularMdp, horizon: usize, count: usize, seed: u64) -> Result<ScenarioSet> {
    let spec = PredictionSpec::full(horizon, mdp.num_actions())?;
    let oracle = PredictionOracle::new(Arc::new(mdp.clone()), spec, NoiseChannel::None, seed)?;
    ScenarioSet::uniform(oracle.take(count).collect())
}

/// Bayesian value with accurate full-coverage predictions for each `K`.
pub fn horizon_sweep(mdp: &TabularMdp, settings: &SweepSettings) -> Result<SweepReport> {
    if settings.horizons.is_empty() || settings.horizons.contains(&0) {
        return Err(Error::invalid("horizons", "need at least one K ≥ 1"));
    }
    if settings.scenarios == 0 {
        return Err(Error::invalid("scenarios", "must be at least 1"));
    }
    let v_mdp = classical_value_iteration(mdp, settings.tol, settings.max_iters)?
        .values
        .into_inner();
    let points = settings
        .horizons
        .iter()
        .map(|&k| -> Result<SweepPoint> {
            let scenarios = accurate_scenarios(
                mdp,
                k,
                settings.scenarios,
                derive_seed(settings.seed, &format!("sweep-scenarios-k{k}")),
            )?;
            let op = BayesOperator::new(mdp, &scenarios)?;
            let solved = op.solve(settings.tol, settings.max_iters)?;
            let (_, std_error) = column_stats(&op.all_scenario_returns(&solved.values)?);
            let mean_value = solved.values.iter().sum::<f64>() / solved.values.len() as f64;
            let mean_improvement = solved
                .values
                .iter()
                .zip(&v_mdp)
                .map(|(v, m)| relative_gain(*v, *m))
                .sum::<f64>()
                / v_mdp.len() as f64;
            Ok(SweepPoint {
                k,
                values: solved.values,
                std_error,
                mean_value,
                mean_improvement,
                iterations: solved.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let v_off = settings
        .offline_reference
        .map(|(k, n)| offline_oracle_value(mdp, k, n, derive_seed(settings.seed, "sweep-offline")))
        .transpose()?;
    let lowest_state = (0..v_mdp.len()).fold(0, |b, s| if v_mdp[s] < v_mdp[b] { s } else { b });
    let highest_state = (0..v_mdp.len()).fold(0, |b, s| if v_mdp[s] > v_mdp[b] { s } else { b });
    Ok(SweepReport {
        v_mdp,
        points,
        v_off,
        lowest_state,
        highest_state,
    })
}
