//! MDPs whose state splits into an action-independent Markov substate `m`
//! and an action-dependent substate `d` with independent transitions:
//! `P((m',d') | (m,d), a) = P(m'|m) · P(d'|d,a)`.
//!
//! Product state index is `m * |D| + d`. Predictions cover the Markov
//! substate only; they are batches over the one-action chain MDP returned by
//! [`SplittableMdp::chain_mdp`].

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{sup_distance, validate_parts, TabularMdp, ValueIterationResult, ValueVector, ROW_SUM_TOL};
use crate::planner::{BayesValueVector, PlanResult, ScenarioSet};
use crate::prediction::{NoiseChannel, OneStepPrediction, PredictionBatch, PredictionOracle, PredictionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittableMdp {
    markov_states: usize,
    dependent_states: usize,
    num_actions: usize,
    /// `P(m'|m)` at `m * |M| + m'`.
    chain: Vec<f64>,
    /// `P(d'|d,a)` at `(d * |A| + a) * |D| + d'`.
    dependent_kernel: Vec<f64>,
    /// `r((m,d), a)` at `(m * |D| + d) * |A| + a`.
    reward: Vec<f64>,
    discount: f64,
}

fn check_rows(table: &[f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in table.chunks(width).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(what, format!("row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Assembles the product of a Markov chain and a dependent kernel.
pub fn compose_splittable(
    markov_states: usize,
    chain: Vec<f64>,
    dependent_states: usize,
    num_actions: usize,
    dependent_kernel: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
) -> Result<SplittableMdp> {
    if markov_states == 0 || dependent_states == 0 || num_actions == 0 {
        return Err(Error::invalid("splittable", "factor spaces must be non-empty"));
    }
    if chain.len() != markov_states * markov_states {
        return Err(Error::ShapeMismatch(format!(
            "chain has {} entries, expected {}",
            chain.len(),
            markov_states * markov_states
        )));
    }
    if dependent_kernel.len() != dependent_states * num_actions * dependent_states {
        return Err(Error::ShapeMismatch(format!(
            "dependent kernel has {} entries, expected {}",
            dependent_kernel.len(),
            dependent_states * num_actions * dependent_states
        )));
    }
    check_rows(&chain, markov_states, "chain")?;
    check_rows(&dependent_kernel, dependent_states, "dependent_kernel")?;
    let num_states = markov_states * dependent_states;
    if reward.len() != num_states * num_actions {
        return Err(Error::ShapeMismatch(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            num_states * num_actions
        )));
    }
    // Rewards and discount go through the tabular validator on a stub kernel.
    let stub: Vec<f64> = (0..num_states * num_actions)
        .flat_map(|_| std::iter::once(1.0).chain(std::iter::repeat_n(0.0, num_states - 1)))
        .collect();
    let report = validate_parts(num_states, num_actions, &stub, &reward, discount);
    if !report.is_pass() {
        return Err(Error::InvalidMdp(report));
    }
    Ok(SplittableMdp {
        markov_states,
        dependent_states,
        num_actions,
        chain,
        dependent_kernel,
        reward,
        discount,
    })
}

impl SplittableMdp {
    pub fn markov_states(&self) -> usize {
        self.markov_states
    }

    pub fn dependent_states(&self) -> usize {
        self.dependent_states
    }

    pub fn num_states(&self) -> usize {
        self.markov_states * self.dependent_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn state(&self, m: usize, d: usize) -> usize {
        m * self.dependent_states + d
    }

    /// `(m, d)` of a product state.
    pub fn split(&self, s: usize) -> (usize, usize) {
        (s / self.dependent_states, s % self.dependent_states)
    }

    pub fn chain_row(&self, m: usize) -> &[f64] {
        &self.chain[m * self.markov_states..(m + 1) * self.markov_states]
    }

    pub fn dependent_row(&self, d: usize, a: usize) -> &[f64] {
        let start = (d * self.num_actions + a) * self.dependent_states;
        &self.dependent_kernel[start..start + self.dependent_states]
    }

    #[inline]
    pub fn reward(&self, m: usize, d: usize, a: usize) -> f64 {
        self.reward[(m * self.dependent_states + d) * self.num_actions + a]
    }

    /// Product-view row `P(· | (m,d), a)`.
    pub fn product_row(&self, s: usize, a: usize) -> Vec<f64> {
        let (m, d) = self.split(s);
        let dep = self.dependent_row(d, a);
        self.chain_row(m)
            .iter()
            .flat_map(|&pm| dep.iter().map(move |&pd| pm * pd))
            .collect()
    }

    /// The flattened product MDP. Its transition table has `|S|²|A|` entries.
    pub fn to_tabular(&self) -> Result<TabularMdp> {
        let ns = self.num_states();
        let mut transition = Vec::with_capacity(ns * self.num_actions * ns);
        for s in 0..ns {
            for a in 0..self.num_actions {
                transition.extend(self.product_row(s, a));
            }
        }
        TabularMdp::new(ns, self.num_actions, transition, self.reward.clone(), self.discount)
    }

    /// The Markov chain as a one-action MDP with zero reward; prediction
    /// batches for this model are batches over it with `A⁻ = {0}`.
    pub fn chain_mdp(&self) -> Result<TabularMdp> {
        TabularMdp::new(
            self.markov_states,
            1,
            self.chain.clone(),
            vec![0.0; self.markov_states],
            self.discount,
        )
    }

    pub fn markov_spec(&self, horizon: usize) -> Result<PredictionSpec> {
        PredictionSpec::new(horizon, vec![0], 1)
    }

    /// Oracle of Markov-substate prediction batches.
    pub fn markov_oracle(&self, horizon: usize, channel: NoiseChannel, seed: u64) -> Result<PredictionOracle> {
        PredictionOracle::new(Arc::new(self.chain_mdp()?), self.markov_spec(horizon)?, channel, seed)
    }

    /// Successor of every `(d, a)` if the dependent kernel is deterministic.
    pub fn dependent_successors(&self) -> Option<Vec<usize>> {
        self.dependent_kernel
            .chunks(self.dependent_states)
            .map(|row| row.iter().position(|&p| p == 1.0))
            .collect()
    }

    /// Lifts a Markov-substate batch into the product view with `A⁻ = A`:
    /// row `((m,d), a)` is `σ_k(·|m) ⊗ P(·|d,a)`.
    pub fn lift_batch(&self, batch: &PredictionBatch) -> Result<PredictionBatch> {
        self.check_markov_batch(batch)?;
        let ns = self.num_states();
        let actions: Arc<[usize]> = (0..self.num_actions).collect::<Vec<_>>().into();
        let steps = batch
            .steps()
            .iter()
            .map(|step| {
                let mut rows = Vec::with_capacity(ns * self.num_actions * ns);
                for s in 0..ns {
                    let (m, d) = self.split(s);
                    let sigma = step.row_at(m, 0);
                    for a in 0..self.num_actions {
                        let dep = self.dependent_row(d, a);
                        rows.extend(sigma.iter().flat_map(|&pm| dep.iter().map(move |&pd| pm * pd)));
                    }
                }
                OneStepPrediction::new(ns, actions.clone(), rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let accurate = batch.is_accurate() && self.dependent_successors().is_some();
        PredictionBatch::new(steps, accurate)
    }

    fn check_markov_batch(&self, batch: &PredictionBatch) -> Result<()> {
        if batch.num_states() != self.markov_states || batch.predictable_actions() != [0] {
            return Err(Error::ShapeMismatch(
                "expected a batch over the Markov substate with A⁻ = {0}".into(),
            ));
        }
        Ok(())
    }

    fn check_values(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_states() {
            return Err(Error::ShapeMismatch(format!(
                "value has {} entries for {} states",
                v.len(),
                self.num_states()
            )));
        }
        Ok(())
    }

    /// Q-values at `(m, d)` given `mixed[d'] = Σ_{m'} P(m'|m) v(m', d')`.
    fn q_values<'a>(&'a self, m: usize, d: usize, mixed: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        (0..self.num_actions).map(move |a| {
            let expected: f64 = self.dependent_row(d, a).iter().zip(mixed).map(|(p, x)| p * x).sum();
            self.reward(m, d, a) + self.discount * expected
        })
    }

    fn mixed_values(&self, v: &[f64], m: usize) -> Vec<f64> {
        let nd = self.dependent_states;
        let mut mixed = vec![0.0; nd];
        for (m2, &p) in self.chain_row(m).iter().enumerate() {
            if p != 0.0 {
                for (x, &val) in mixed.iter_mut().zip(&v[m2 * nd..(m2 + 1) * nd]) {
                    *x += p * val;
                }
            }
        }
        mixed
    }

    /// One classical Bellman sweep using the factorization.
    pub fn bellman_apply(&self, v: &[f64]) -> Vec<f64> {
        let nd = self.dependent_states;
        (0..self.markov_states)
            .flat_map(|m| {
                let mixed = self.mixed_values(v, m);
                (0..nd)
                    .map(|d| self.q_values(m, d, &mixed).fold(f64::NEG_INFINITY, f64::max))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Classical value iteration with the same stopping rule as the tabular solver.
    pub fn value_iteration(&self, tol: f64, max_iters: usize) -> Result<ValueIterationResult> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        let threshold = tol * (1.0 - self.discount) / self.discount;
        let mut v = vec![0.0; self.num_states()];
        let mut residual = f64::INFINITY;
        for iteration in 1..=max_iters {
            let next = self.bellman_apply(&v);
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

    /// Greedy action at `(m, d)` with ties to the lowest index.
    pub fn greedy_action(&self, v: &[f64], m: usize, d: usize) -> usize {
        let mixed = self.mixed_values(v, m);
        let mut best = (0, f64::NEG_INFINITY);
        for (a, q) in self.q_values(m, d, &mixed).enumerate() {
            if q > best.1 {
                best = (a, q);
            }
        }
        best.0
    }

    /// `μ_0..μ_K`: Markov-substate marginals from `m0` under the batch.
    pub fn markov_marginals(&self, batch: &PredictionBatch, m0: usize) -> Vec<Vec<f64>> {
        let nm = self.markov_states;
        let mut out = Vec::with_capacity(batch.horizon() + 1);
        let mut mu = vec![0.0; nm];
        mu[m0] = 1.0;
        out.push(mu.clone());
        for step in batch.steps() {
            let mut next = vec![0.0; nm];
            for (m, &mass) in mu.iter().enumerate() {
                if mass != 0.0 {
                    for (x, &p) in next.iter_mut().zip(step.row_at(m, 0)) {
                        *x += mass * p;
                    }
                }
            }
            mu = next;
            out.push(mu.clone());
        }
        out
    }

    /// Backward DP over the dependent substate for fixed marginals:
    /// `W_t(d) = max_a Σ_m μ_t(m) r((m,d),a) + γ W_{t+1}(succ(d,a))`,
    /// `W_K(d) = Σ_m μ_K(m) v(m,d)`. Exact for open-loop plans because
    /// `m` evolves independently of the actions.
    fn block_tables(&self, successors: &[usize], marginals: &[Vec<f64>], terminal: &[f64]) -> Vec<Vec<f64>> {
        let nd = self.dependent_states;
        let na = self.num_actions;
        let k = marginals.len() - 1;
        let mut tables = vec![Vec::new(); k + 1];
        let mut last = vec![0.0; nd];
        for (m, &mass) in marginals[k].iter().enumerate() {
            if mass != 0.0 {
                for (x, &val) in last.iter_mut().zip(&terminal[m * nd..(m + 1) * nd]) {
                    *x += mass * val;
                }
            }
        }
        tables[k] = last;
        for t in (0..k).rev() {
            let mut expected_reward = vec![0.0; nd * na];
            for (m, &mass) in marginals[t].iter().enumerate() {
                if mass != 0.0 {
                    let block = &self.reward[m * nd * na..(m + 1) * nd * na];
                    for (x, &r) in expected_reward.iter_mut().zip(block) {
                        *x += mass * r;
                    }
                }
            }
            let next = &tables[t + 1];
            tables[t] = (0..nd)
                .map(|d| {
                    (0..na)
                        .map(|a| expected_reward[d * na + a] + self.discount * next[successors[d * na + a]])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        tables
    }

    fn require_successors(&self) -> Result<Vec<usize>> {
        self.dependent_successors().ok_or_else(|| {
            Error::Precondition("factored planning needs a deterministic dependent kernel".into())
        })
    }

    /// Best open-loop plan from `(m0, d0)` against a Markov-substate batch.
    /// Ties resolve to the lexicographically smallest sequence.
    pub fn plan(&self, batch: &PredictionBatch, m0: usize, d0: usize, terminal: &[f64]) -> Result<PlanResult> {
        self.check_markov_batch(batch)?;
        self.check_values(terminal)?;
        if m0 >= self.markov_states || d0 >= self.dependent_states {
            return Err(Error::invalid("state", "start state out of range"));
        }
        let successors = self.require_successors()?;
        let marginals = self.markov_marginals(batch, m0);
        let tables = self.block_tables(&successors, &marginals, terminal);
        let nd = self.dependent_states;
        let na = self.num_actions;
        let mut actions = Vec::with_capacity(batch.horizon());
        let mut d = d0;
        for t in 0..batch.horizon() {
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..na {
                let r: f64 = marginals[t]
                    .iter()
                    .enumerate()
                    .filter(|(_, &mass)| mass != 0.0)
                    .map(|(m, &mass)| mass * self.reward[(m * nd + d) * na + a])
                    .sum();
                let q = r + self.discount * tables[t + 1][successors[d * na + a]];
                if q > best.1 {
                    best = (a, q);
                }
            }
            actions.push(best.0);
            d = successors[d * na + best.0];
        }
        Ok(PlanResult {
            actions,
            expected_return: tables[0][d0],
        })
    }

    /// Plan values from every product state under one batch.
    pub fn scenario_returns(&self, batch: &PredictionBatch, terminal: &[f64]) -> Result<Vec<f64>> {
        self.check_markov_batch(batch)?;
        self.check_values(terminal)?;
        let successors = self.require_successors()?;
        Ok((0..self.markov_states)
            .flat_map(|m0| {
                let marginals = self.markov_marginals(batch, m0);
                self.block_tables(&successors, &marginals, terminal).swap_remove(0)
            })
            .collect())
    }

    /// One application of the Bayesian Bellman operator over Markov-substate
    /// scenarios, reduced in scenario order.
    pub fn bayes_apply(&self, scenarios: &ScenarioSet, v: &[f64]) -> Result<Vec<f64>> {
        let per_scenario = scenarios
            .scenarios()
            .par_iter()
            .map(|batch| self.scenario_returns(batch, v))
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![0.0; self.num_states()];
        for (returns, &w) in per_scenario.iter().zip(scenarios.weights()) {
            for (o, r) in out.iter_mut().zip(returns) {
                *o += w * r;
            }
        }
        Ok(out)
    }

    /// Bayesian value iteration; stops at `||ΔV||∞ ≤ tol (1-γ^K)/γ^K`.
    pub fn bayes_value_iteration(&self, scenarios: &ScenarioSet, tol: f64, max_iters: usize) -> Result<BayesValueVector> {
        if !(tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        let modulus = self.discount.powi(scenarios.horizon() as i32);
        let threshold = tol * (1.0 - modulus) / modulus;
        let mut v = vec![0.0; self.num_states()];
        let mut residual = f64::INFINITY;
        for iteration in 1..=max_iters {
            let next = self.bayes_apply(scenarios, &v)?;
            residual = sup_distance(&next, &v);
            v = next;
            if residual <= threshold {
                let accurate = scenarios.scenarios().iter().all(PredictionBatch::is_accurate);
                return Ok(BayesValueVector {
                    values: v,
                    horizon: scenarios.horizon(),
                    predictable_actions: self.num_actions,
                    noise: if accurate { "accurate" } else { "noisy" }.into(),
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
