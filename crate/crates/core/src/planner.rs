//! Prediction-aware planning.
//!
//! Given a prediction batch `σ` the agent commits to `K` actions from the
//! current state, maximizing
//!
//! ```text
//! Σ_{t<K} γ^t E[r(s_t, a_t) | s, a_{0:t-1}, σ_{1:t}] + γ^K E[V(s_K) | s, a, σ]
//! ```
//!
//! Averaging the maximized objective over a [`ScenarioSet`] gives the
//! Bayesian Bellman operator, a `γ^K`-contraction whose fixed point is the
//! Bayesian value function.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sup_distance, TabularMdp, ROW_SUM_TOL};
use crate::prediction::{conditioned_transition, OneStepPrediction, PredictionBatch, PredictionSpec};

/// Default cap on the number of `|A|^K` sequences enumerated per plan.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Empirical (or exact, when enumerable) law of prediction batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    scenarios: Vec<PredictionBatch>,
    weights: Vec<f64>,
}

impl ScenarioSet {
    pub fn new(scenarios: Vec<PredictionBatch>, weights: Vec<f64>) -> Result<Self> {
        let first = scenarios
            .first()
            .ok_or_else(|| Error::invalid("scenarios", "scenario set is empty"))?;
        if weights.len() != scenarios.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} scenarios",
                weights.len(),
                scenarios.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::invalid("weights", "weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid("weights", format!("weights sum to {total}")));
        }
        if scenarios.iter().any(|b| !b.same_shape(first)) {
            return Err(Error::ShapeMismatch("scenarios differ in (K, A⁻) shape".into()));
        }
        Ok(ScenarioSet { scenarios, weights })
    }

    /// Equal weight `1/n` on every draw, repeats included.
    pub fn uniform(scenarios: Vec<PredictionBatch>) -> Result<Self> {
        let n = scenarios.len();
        Self::new(scenarios, vec![1.0 / n.max(1) as f64; n])
    }

    /// The exact law of accurate realizations, enumerated outcome by
    /// outcome. Fails when the support exceeds `cap` batches.
    pub fn exact_accurate_law(mdp: &TabularMdp, spec: &PredictionSpec, cap: usize) -> Result<Self> {
        let ns = mdp.num_states();
        let actions: Arc<[usize]> = spec.predictable_actions().into();
        if actions.is_empty() {
            return Err(Error::invalid("predictable_actions", "A⁻ is empty"));
        }
        // One categorical per (step, s, a ∈ A⁻); each keeps only its support.
        let mut supports: Vec<Vec<(usize, f64)>> = Vec::new();
        for _ in 0..spec.horizon() {
            for s in 0..ns {
                for &a in actions.iter() {
                    let support = mdp
                        .kernel_row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(i, &p)| (i, p))
                        .collect();
                    supports.push(support);
                }
            }
        }
        let count = supports
            .iter()
            .fold(1u128, |acc, support| acc.saturating_mul(support.len() as u128));
        if count > cap as u128 {
            return Err(Error::EnumerationBudget {
                sequences: count,
                cap: cap as u64,
            });
        }
        let count = count as usize;

        let rows_per_step = ns * actions.len();
        let mut scenarios = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        let mut digits = vec![0usize; supports.len()];
        loop {
            let mut weight = 1.0;
            let mut steps = Vec::with_capacity(spec.horizon());
            for k in 0..spec.horizon() {
                let mut rows = vec![0.0; rows_per_step * ns];
                for r in 0..rows_per_step {
                    let idx = k * rows_per_step + r;
                    let (next, p) = supports[idx][digits[idx]];
                    weight *= p;
                    rows[r * ns + next] = 1.0;
                }
                steps.push(OneStepPrediction::new(ns, actions.clone(), rows)?);
            }
            scenarios.push(PredictionBatch::new(steps, true)?);
            weights.push(weight);

            // Odometer increment.
            let mut pos = digits.len();
            loop {
                if pos == 0 {
                    let total: f64 = weights.iter().sum();
                    weights.iter_mut().for_each(|w| *w /= total);
                    return Self::new(scenarios, weights);
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < supports[pos].len() {
                    break;
                }
                digits[pos] = 0;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.scenarios[0].horizon()
    }

    pub fn scenarios(&self) -> &[PredictionBatch] {
        &self.scenarios
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn predictable_actions(&self) -> &[usize] {
        self.scenarios[0].predictable_actions()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PredictionBatch, f64)> {
        self.scenarios.iter().zip(self.weights.iter().copied())
    }
}

/// The fixed point of the Bayesian Bellman operator plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesValueVector {
    pub values: Vec<f64>,
    pub horizon: usize,
    pub predictable_actions: usize,
    pub noise: String,
    pub iterations: usize,
    /// `||V_{n+1} - V_n||∞` at the final sweep.
    pub residual: f64,
    /// Guaranteed sup-distance to the operator's fixed point.
    pub tolerance: f64,
}

/// Result of open-loop planning over one prediction batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub actions: Vec<usize>,
    pub expected_return: f64,
}

fn check_batch(mdp: &TabularMdp, batch: &PredictionBatch) -> Result<()> {
    if batch.num_states() != mdp.num_states() {
        return Err(Error::ShapeMismatch(format!(
            "batch covers {} states, MDP has {}",
            batch.num_states(),
            mdp.num_states()
        )));
    }
    if batch.predictable_actions().iter().any(|&a| a >= mdp.num_actions()) {
        return Err(Error::ShapeMismatch("batch predicts actions outside the MDP".into()));
    }
    Ok(())
}

fn check_terminal(mdp: &TabularMdp, terminal: &[f64]) -> Result<()> {
    if terminal.len() != mdp.num_states() {
        return Err(Error::ShapeMismatch(format!(
            "terminal value has {} entries for {} states",
            terminal.len(),
            mdp.num_states()
        )));
    }
    Ok(())
}

/// One propagation step: `out(s') = Σ_s dist(s) P(s' | s, a, σ_k)`.
fn push_forward(mdp: &TabularMdp, sigma: &OneStepPrediction, dist: &[f64], a: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (s, &mass) in dist.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (o, &p) in out.iter_mut().zip(conditioned_transition(mdp, sigma, s, a)) {
            *o += mass * p;
        }
    }
}

#[inline]
fn expected_reward(mdp: &TabularMdp, dist: &[f64], a: usize) -> f64 {
    dist.iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(s, &m)| m * mdp.reward(s, a))
        .sum()
}

/// Distribution of `s_t` after applying the action prefix from `s0`.
pub fn propagate(mdp: &TabularMdp, batch: &PredictionBatch, s0: usize, actions: &[usize]) -> Result<Vec<f64>> {
    check_batch(mdp, batch)?;
    if actions.len() > batch.horizon() {
        return Err(Error::invalid(
            "actions",
            format!("prefix of length {} exceeds K={}", actions.len(), batch.horizon()),
        ));
    }
    if s0 >= mdp.num_states() {
        return Err(Error::invalid("s0", "state out of range"));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= mdp.num_actions()) {
        return Err(Error::invalid("actions", format!("action {a} out of range")));
    }
    let mut dist = vec![0.0; mdp.num_states()];
    dist[s0] = 1.0;
    let mut next = dist.clone();
    for (t, &a) in actions.iter().enumerate() {
        push_forward(mdp, batch.step(t + 1), &dist, a, &mut next);
        std::mem::swap(&mut dist, &mut next);
    }
    Ok(dist)
}

fn sequence_count(num_actions: usize, horizon: usize) -> u128 {
    (num_actions as u128).saturating_pow(horizon as u32)
}

/// Exhaustive open-loop planning over all `|A|^K` sequences.
///
/// Ties resolve to the lexicographically smallest sequence.
pub fn plan_open_loop(
    mdp: &TabularMdp,
    batch: &PredictionBatch,
    s: usize,
    terminal: &[f64],
    enumeration_cap: u64,
) -> Result<PlanResult> {
    check_batch(mdp, batch)?;
    check_terminal(mdp, terminal)?;
    if s >= mdp.num_states() {
        return Err(Error::invalid("s", "state out of range"));
    }
    let sequences = sequence_count(mdp.num_actions(), batch.horizon());
    if sequences > enumeration_cap as u128 {
        return Err(Error::EnumerationBudget {
            sequences,
            cap: enumeration_cap,
        });
    }

    let k = batch.horizon();
    let ns = mdp.num_states();
    // dists[t] is the distribution of s_t under the current prefix.
    let mut dists = vec![vec![0.0; ns]; k + 1];
    dists[0][s] = 1.0;
    let mut search = Search {
        mdp,
        batch,
        terminal,
        discounts: (0..=k).map(|t| mdp.discount().powi(t as i32)).collect(),
        prefix: Vec::with_capacity(k),
        best: None,
    };
    search.descend(&mut dists, 0, 0.0);
    let (actions, expected_return) = search.best.expect("at least one action sequence");
    Ok(PlanResult {
        actions,
        expected_return,
    })
}

struct Search<'a> {
    mdp: &'a TabularMdp,
    batch: &'a PredictionBatch,
    terminal: &'a [f64],
    discounts: Vec<f64>,
    prefix: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl Search<'_> {
    fn descend(&mut self, dists: &mut [Vec<f64>], t: usize, accumulated: f64) {
        let k = self.batch.horizon();
        if t == k {
            let tail: f64 = dists[k].iter().zip(self.terminal).map(|(p, v)| p * v).sum();
            let total = accumulated + self.discounts[k] * tail;
            if self.best.as_ref().is_none_or(|(_, b)| total > *b) {
                self.best = Some((self.prefix.clone(), total));
            }
            return;
        }
        for a in 0..self.mdp.num_actions() {
            let gain = self.discounts[t] * expected_reward(self.mdp, &dists[t], a);
            let (head, tail) = dists.split_at_mut(t + 1);
            push_forward(self.mdp, self.batch.step(t + 1), &head[t], a, &mut tail[0]);
            self.prefix.push(a);
            self.descend(dists, t + 1, accumulated + gain);
            self.prefix.pop();
        }
    }
}

/// Backward DP tables for a deterministic batch: `values[t][x]` is the best
/// return-to-go from state `x` at step `t`.
fn deterministic_tables(mdp: &TabularMdp, batch: &PredictionBatch, terminal: &[f64]) -> Vec<Vec<f64>> {
    let k = batch.horizon();
    let gamma = mdp.discount();
    let mut values = vec![Vec::new(); k + 1];
    values[k] = terminal.to_vec();
    for t in (0..k).rev() {
        let step = batch.step(t + 1);
        let row: Vec<f64> = (0..mdp.num_states())
            .map(|x| {
                (0..mdp.num_actions())
                    .map(|a| mdp.reward(x, a) + gamma * values[t + 1][step.successor_at(x, a)])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        values[t] = row;
    }
    values
}

fn check_shortcut(mdp: &TabularMdp, batch: &PredictionBatch) -> Result<()> {
    check_batch(mdp, batch)?;
    if !batch.is_accurate() || batch.predictable_actions().len() != mdp.num_actions() {
        return Err(Error::Precondition(
            "the DP shortcut needs an accurate batch covering every action".into(),
        ));
    }
    Ok(())
}

/// Backward-DP planner for accurate full-coverage batches, `O(K|S||A|)`.
///
/// With deterministic conditioned dynamics the open-loop optimum equals the
/// closed-loop one, so this matches [`plan_open_loop`].
pub fn dp_shortcut_plan(
    mdp: &TabularMdp,
    batch: &PredictionBatch,
    s: usize,
    terminal: &[f64],
) -> Result<PlanResult> {
    check_shortcut(mdp, batch)?;
    check_terminal(mdp, terminal)?;
    if s >= mdp.num_states() {
        return Err(Error::invalid("s", "state out of range"));
    }
    let values = deterministic_tables(mdp, batch, terminal);
    let gamma = mdp.discount();
    let mut actions = Vec::with_capacity(batch.horizon());
    let mut x = s;
    for t in 0..batch.horizon() {
        let step = batch.step(t + 1);
        let target = values[t][x];
        let a = (0..mdp.num_actions())
            .find(|&a| mdp.reward(x, a) + gamma * values[t + 1][step.successor_at(x, a)] == target)
            .expect("the maximum is attained");
        actions.push(a);
        x = step.successor_at(x, a);
    }
    Ok(PlanResult {
        actions,
        expected_return: values[0][s],
    })
}

/// The empirical Bayesian Bellman operator over a scenario set.
#[derive(Debug, Clone, Copy)]
pub struct BayesOperator<'a> {
    mdp: &'a TabularMdp,
    scenarios: &'a ScenarioSet,
    enumeration_cap: u64,
}

impl<'a> BayesOperator<'a> {
    pub fn new(mdp: &'a TabularMdp, scenarios: &'a ScenarioSet) -> Result<Self> {
        check_batch(mdp, &scenarios.scenarios[0])?;
        Ok(BayesOperator {
            mdp,
            scenarios,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        })
    }

    pub fn with_enumeration_cap(mut self, cap: u64) -> Self {
        self.enumeration_cap = cap;
        self
    }

    /// `γ^K`.
    pub fn modulus(&self) -> f64 {
        self.mdp.discount().powi(self.scenarios.horizon() as i32)
    }

    /// Best plan value from every start state under one scenario.
    pub fn scenario_returns(&self, batch: &PredictionBatch, v: &[f64]) -> Result<Vec<f64>> {
        if batch.is_accurate() && batch.predictable_actions().len() == self.mdp.num_actions() {
            Ok(deterministic_tables(self.mdp, batch, v).swap_remove(0))
        } else {
            (0..self.mdp.num_states())
                .map(|s| {
                    plan_open_loop(self.mdp, batch, s, v, self.enumeration_cap).map(|p| p.expected_return)
                })
                .collect()
        }
    }

    /// Per-scenario plan values, in scenario order.
    pub fn all_scenario_returns(&self, v: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_terminal(self.mdp, v)?;
        let sequences = sequence_count(self.mdp.num_actions(), self.scenarios.horizon());
        if sequences > self.enumeration_cap as u128
            && self
                .scenarios
                .scenarios
                .iter()
                .any(|b| !(b.is_accurate() && b.predictable_actions().len() == self.mdp.num_actions()))
        {
            return Err(Error::EnumerationBudget {
                sequences,
                cap: self.enumeration_cap,
            });
        }
        self.scenarios
            .scenarios
            .par_iter()
            .map(|batch| self.scenario_returns(batch, v))
            .collect()
    }

    /// `T(v)(s) = Σ_i w_i · max_a J(s, a; σ_i, v)`, reduced in scenario order.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let per_scenario = self.all_scenario_returns(v)?;
        let mut out = vec![0.0; self.mdp.num_states()];
        for (returns, &w) in per_scenario.iter().zip(&self.scenarios.weights) {
            for (o, r) in out.iter_mut().zip(returns) {
                *o += w * r;
            }
        }
        Ok(out)
    }

    /// Iterates from `V = 0` until `||V_{n+1} - V_n||∞ ≤ tol (1-γ^K)/γ^K`.
    pub fn solve(&self, tol: f64, max_iters: usize) -> Result<BayesValueVector> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        let modulus = self.modulus();
        let threshold = tol * (1.0 - modulus) / modulus;
        let mut v = vec![0.0; self.mdp.num_states()];
        let mut residual = f64::INFINITY;
        for iteration in 1..=max_iters {
            let next = self.apply(&v)?;
            residual = sup_distance(&next, &v);
            v = next;
            if residual <= threshold {
                return Ok(BayesValueVector {
                    values: v,
                    horizon: self.scenarios.horizon(),
                    predictable_actions: self.scenarios.predictable_actions().len(),
                    noise: if self.scenarios.scenarios.iter().all(PredictionBatch::is_accurate) {
                        "accurate".into()
                    } else {
                        "noisy".into()
                    },
                    iterations: iteration,
                    residual,
                    tolerance: tol,
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: max_iters,
            residual,
        })
    }
}

/// One application of the Bayesian Bellman operator.
pub fn bayes_bellman_apply(mdp: &TabularMdp, scenarios: &ScenarioSet, v: &[f64]) -> Result<Vec<f64>> {
    BayesOperator::new(mdp, scenarios)?.apply(v)
}

/// Fixed point of the Bayesian Bellman operator to within `tol`.
pub fn bayes_value_iteration(
    mdp: &TabularMdp,
    scenarios: &ScenarioSet,
    tol: f64,
    max_iters: usize,
) -> Result<BayesValueVector> {
    BayesOperator::new(mdp, scenarios)?.solve(tol, max_iters)
}

/// Picks the DP shortcut when its precondition holds, enumeration otherwise.
pub fn plan(
    mdp: &TabularMdp,
    batch: &PredictionBatch,
    s: usize,
    terminal: &[f64],
    enumeration_cap: u64,
) -> Result<PlanResult> {
    if batch.is_accurate() && batch.predictable_actions().len() == mdp.num_actions() {
        dp_shortcut_plan(mdp, batch, s, terminal)
    } else {
        plan_open_loop(mdp, batch, s, terminal, enumeration_cap)
    }
}
