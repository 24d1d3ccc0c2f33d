//! Bayesian offline learning with online adaptation.
//!
//! Offline: draw `N1` next-state samples per unpredictable pair from a
//! generative model, one reward observation per pair, and `N2` prediction
//! batches from the prediction oracle; estimate `P̂` and `P̂(σ)` by empirical
//! frequency and solve the estimated Bayesian value function. Online: plan
//! `K` actions against each incoming batch using the learned value as the
//! terminal value.

use std::sync::Arc;

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{RolloutStats, TabularMdp};
use crate::planner::{self, BayesOperator, BayesValueVector, PlanResult, ScenarioSet, DEFAULT_ENUMERATION_CAP};
use crate::prediction::{NoiseChannel, PredictionBatch, PredictionOracle, PredictionSpec};
use crate::rng::{derive_seed, sample_categorical, seeded};

/// Inputs of the sample-budget formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInputs {
    pub gamma: f64,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub num_predictable: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

/// Sample counts guaranteeing `||V̂ - V||∞ ≤ ε` with probability `1-δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    /// Next-state samples per unpredictable `(s, a)`.
    pub n1: u64,
    /// Prediction-oracle draws.
    pub n2: u64,
    /// Total generative-model queries: `n1 |S| (|A| - |A⁻|) + |S||A|`.
    pub d1: u64,
    pub d2: u64,
    /// Pre-ceiling values of the closed forms.
    pub n1_raw: f64,
    pub n2_raw: f64,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
}

/// Closed-form budgets:
///
/// ```text
/// N1 = 2 log(1 + 4K²|S|(|A|-|A⁻|)/δ) / ((1-γ)⁴ (1-α)² ε²)
/// N2 = 2 log(4|S|/δ) / ((1-γ)² (1-γ^K)² α² ε²)
/// ```
pub fn compute_budget(inputs: &BudgetInputs) -> Result<SampleBudget> {
    let BudgetInputs {
        gamma,
        horizon,
        num_states,
        num_actions,
        num_predictable,
        delta,
        epsilon,
        alpha,
    } = *inputs;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma", "must lie in (0,1)"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon", "K must be at least 1"));
    }
    if num_states == 0 || num_actions == 0 {
        return Err(Error::invalid("num_states", "spaces must be non-empty"));
    }
    if num_predictable > num_actions {
        return Err(Error::invalid("num_predictable", "|A⁻| exceeds |A|"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0,1)"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0,1)"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0 / (1.0 - gamma)) {
        return Err(Error::invalid("epsilon", "must lie in (0, 1/(1-γ))"));
    }

    let unpredictable = num_actions - num_predictable;
    let (n1_raw, n2_raw) = budget_closed_forms(gamma, horizon, num_states, unpredictable, delta, epsilon, alpha);

    let n1 = n1_raw.ceil() as u64;
    let n2 = n2_raw.ceil() as u64;
    let pairs = (num_states * num_actions) as u64;
    Ok(SampleBudget {
        n1,
        n2,
        d1: n1 * num_states as u64 * (num_actions - num_predictable) as u64 + pairs,
        d2: n2,
        n1_raw,
        n2_raw,
        alpha,
        delta,
        epsilon,
    })
}

/// Evaluates both closed forms at 256 bits from the exact double inputs and
/// rounds once, so the raw budgets are correctly rounded.
fn budget_closed_forms(
    gamma: f64,
    horizon: usize,
    num_states: usize,
    unpredictable: usize,
    delta: f64,
    epsilon: f64,
    alpha: f64,
) -> (f64, f64) {
    const P: usize = 256;
    const RM: RoundingMode = RoundingMode::ToEven;
    let mut cc = Consts::new().expect("constant cache");
    let big = |x: f64| BigFloat::from_f64(x, P);
    let int = |x: usize| BigFloat::from_u64(x as u64, P);
    let one = big(1.0);
    let two = big(2.0);
    let four = big(4.0);

    let k = int(horizon);
    let s = int(num_states);
    let (delta, epsilon, alpha) = (big(delta), big(epsilon), big(alpha));
    let one_minus_gamma = one.sub(&big(gamma), P, RM);
    let eps_sq = epsilon.mul(&epsilon, P, RM);

    // 2 ln(1 + 4K²|S|(|A|-|A⁻|)/δ) / ((1-γ)⁴ (1-α)² ε²)
    let count = four.mul(&k, P, RM).mul(&k, P, RM).mul(&s, P, RM).mul(&int(unpredictable), P, RM);
    let log1 = one.add(&count.div(&delta, P, RM), P, RM).ln(P, RM, &mut cc);
    let den1 = one_minus_gamma
        .powi(4, P, RM)
        .mul(&one.sub(&alpha, P, RM).powi(2, P, RM), P, RM)
        .mul(&eps_sq, P, RM);
    let n1 = two.mul(&log1, P, RM).div(&den1, P, RM);

    // 2 ln(4|S|/δ) / ((1-γ)² (1-γ^K)² α² ε²)
    let log2 = four.mul(&s, P, RM).div(&delta, P, RM).ln(P, RM, &mut cc);
    let tail = one.sub(&big(gamma).powi(horizon, P, RM), P, RM);
    let den2 = one_minus_gamma
        .powi(2, P, RM)
        .mul(&tail.powi(2, P, RM), P, RM)
        .mul(&alpha.powi(2, P, RM), P, RM)
        .mul(&eps_sq, P, RM);
    let n2 = two.mul(&log2, P, RM).div(&den2, P, RM);

    (round_to_f64(&n1), round_to_f64(&n2))
}

/// Nearest double to a finite positive `BigFloat`.
fn round_to_f64(x: &BigFloat) -> f64 {
    let (words, _, _, exponent, _) = x.as_raw_parts().expect("finite budget");
    let Some((&top, rest)) = words.split_last() else {
        return 0.0;
    };
    if top == 0 {
        return 0.0;
    }
    // The mantissa is normalized, value = top / 2^64 · 2^e + lower words.
    // Folding the lower words into bit 0 only matters to break a tie,
    // which the u64 → f64 conversion then resolves correctly.
    let sticky = rest.iter().any(|&w| w != 0);
    let m = if sticky { top | 1 } else { top };
    m as f64 * 2f64.powi(exponent - 64)
}

/// Raw draws from the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSamples {
    pub num_states: usize,
    pub num_actions: usize,
    pub n1: usize,
    pub predictable_actions: Vec<usize>,
    /// Next-state draws per pair `s * |A| + a`; empty for `a ∈ A⁻`.
    pub next_states: Vec<Vec<usize>>,
    /// One reward observation per pair.
    pub rewards: Vec<f64>,
}

impl GenerativeSamples {
    pub fn total_draws(&self) -> usize {
        self.next_states.iter().map(Vec::len).sum()
    }
}

/// Queries the generative model: `n1` next states for every `(s, a ∉ A⁻)`
/// and one reward for every pair. Each pair has its own seeded stream.
pub fn sample_generative(
    mdp: &TabularMdp,
    n1: usize,
    predictable_actions: &[usize],
    seed: u64,
) -> Result<GenerativeSamples> {
    if n1 == 0 && predictable_actions.len() < mdp.num_actions() {
        return Err(Error::invalid("n1", "need at least one sample per unpredictable pair"));
    }
    let na = mdp.num_actions();
    let next_states = (0..mdp.num_states() * na)
        .into_par_iter()
        .map(|pair| {
            let (s, a) = (pair / na, pair % na);
            if predictable_actions.contains(&a) {
                return Vec::new();
            }
            let mut rng = seeded(derive_seed(seed, &format!("generative-{s}-{a}")));
            (0..n1)
                .map(|_| sample_categorical(mdp.kernel_row(s, a), rng.random::<f64>()))
                .collect()
        })
        .collect();
    Ok(GenerativeSamples {
        num_states: mdp.num_states(),
        num_actions: na,
        n1,
        predictable_actions: predictable_actions.to_vec(),
        next_states,
        rewards: mdp.reward_table().to_vec(),
    })
}

/// Empirical next-state frequencies `P̂(s'|s,a) = count(s') / N1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEstimate {
    pub num_states: usize,
    pub num_actions: usize,
    pub n1: usize,
    /// Exact counts per pair; `None` for predictable actions.
    pub counts: Vec<Option<Vec<u64>>>,
}

impl TransitionEstimate {
    pub fn row(&self, s: usize, a: usize) -> Option<Vec<f64>> {
        self.counts[s * self.num_actions + a]
            .as_ref()
            .map(|c| c.iter().map(|&n| n as f64 / self.n1 as f64).collect())
    }
}

pub fn estimate_transitions(store: &GenerativeSamples) -> Result<TransitionEstimate> {
    let ns = store.num_states;
    let counts = store
        .next_states
        .iter()
        .enumerate()
        .map(|(pair, draws)| {
            let a = pair % store.num_actions;
            if store.predictable_actions.contains(&a) {
                return Ok(None);
            }
            if draws.is_empty() {
                return Err(Error::invalid(
                    "samples",
                    format!("no samples for pair (s={}, a={a})", pair / store.num_actions),
                ));
            }
            let mut row = vec![0u64; ns];
            for &next in draws {
                row[next] += 1;
            }
            Ok(Some(row))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransitionEstimate {
        num_states: ns,
        num_actions: store.num_actions,
        n1: store.n1,
        counts,
    })
}

/// `P̂(σ)`: the `n2` oracle draws with uniform weights, repeats kept.
pub fn estimate_prediction_distribution(oracle: &mut PredictionOracle, n2: usize) -> Result<ScenarioSet> {
    if n2 == 0 {
        return Err(Error::invalid("n2", "need at least one prediction sample"));
    }
    ScenarioSet::uniform(oracle.take(n2).collect())
}

/// Everything the offline stage learned from samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedModel {
    pub spec: PredictionSpec,
    pub transition_hat: TransitionEstimate,
    pub reward_hat: Vec<f64>,
    pub scenarios: ScenarioSet,
    /// `P̂` for unpredictable actions, rewards `r̂`; the rows of predictable
    /// actions hold the scenario-average prediction and are never read by
    /// the planner, which conditions them on `σ`.
    pub planning_mdp: TabularMdp,
}

impl EstimatedModel {
    pub fn new(
        spec: PredictionSpec,
        transition_hat: TransitionEstimate,
        reward_hat: Vec<f64>,
        scenarios: ScenarioSet,
        discount: f64,
    ) -> Result<Self> {
        let ns = transition_hat.num_states;
        let na = transition_hat.num_actions;
        if scenarios.predictable_actions() != spec.predictable_actions()
            || scenarios.horizon() != spec.horizon()
        {
            return Err(Error::ShapeMismatch("scenario set does not match the prediction spec".into()));
        }
        let mut transition = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                match transition_hat.row(s, a) {
                    Some(est) => row.copy_from_slice(&est),
                    None => {
                        for (batch, w) in scenarios.iter() {
                            for step in batch.steps() {
                                let pred = step.row(s, a).expect("predictable action has a row");
                                for (x, p) in row.iter_mut().zip(pred) {
                                    *x += w * p / batch.horizon() as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
        let planning_mdp = TabularMdp::with_renormalized_rows(ns, na, transition, reward_hat.clone(), discount)?;
        Ok(EstimatedModel {
            spec,
            transition_hat,
            reward_hat,
            scenarios,
            planning_mdp,
        })
    }
}

/// Solves the estimated Bayesian value function by value iteration.
pub fn learn_bayes_value(model: &EstimatedModel, tol: f64, max_iters: usize) -> Result<BayesValueVector> {
    BayesOperator::new(&model.planning_mdp, &model.scenarios)?.solve(tol, max_iters)
}

/// The online stage: immutable learned artifacts plus a planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineAgent {
    pub model: EstimatedModel,
    pub learned_value: BayesValueVector,
    pub enumeration_cap: u64,
}

impl OnlineAgent {
    pub fn new(model: EstimatedModel, learned_value: BayesValueVector) -> Self {
        OnlineAgent {
            model,
            learned_value,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Plans `K` actions from `s` against the observed batch.
    pub fn online_step(&self, s: usize, batch: &PredictionBatch) -> Result<PlanResult> {
        if !batch.matches_spec(&self.model.spec, self.model.planning_mdp.num_states()) {
            return Err(Error::ShapeMismatch("batch does not match the agent's prediction spec".into()));
        }
        planner::plan(
            &self.model.planning_mdp,
            batch,
            s,
            &self.learned_value.values,
            self.enumeration_cap,
        )
    }
}

/// Free-function form of [`OnlineAgent::online_step`].
pub fn online_step(agent: &OnlineAgent, s: usize, batch: &PredictionBatch) -> Result<PlanResult> {
    agent.online_step(s, batch)
}

/// Runs the offline stage and returns the agent.
pub fn learn_offline(
    mdp: &TabularMdp,
    spec: &PredictionSpec,
    channel: &NoiseChannel,
    n1: usize,
    n2: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<OnlineAgent> {
    let samples = sample_generative(mdp, n1, spec.predictable_actions(), derive_seed(seed, "generative"))?;
    let transition_hat = estimate_transitions(&samples)?;
    let mut oracle = PredictionOracle::new(
        Arc::new(mdp.clone()),
        spec.clone(),
        *channel,
        derive_seed(seed, "prediction-oracle"),
    )?;
    let scenarios = estimate_prediction_distribution(&mut oracle, n2)?;
    let model = EstimatedModel::new(spec.clone(), transition_hat, samples.rewards, scenarios, mdp.discount())?;
    let learned_value = learn_bayes_value(&model, tol, max_iters)?;
    Ok(OnlineAgent::new(model, learned_value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BolaRunConfig {
    pub n1: usize,
    pub n2: usize,
    pub episodes: usize,
    /// Environment steps per episode.
    pub horizon: usize,
    pub start_state: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub record_trajectories: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub discounted_return: f64,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BolaReport {
    pub returns: RolloutStats,
    pub learned_value: Vec<f64>,
    pub episodes: Vec<EpisodeTrace>,
}

/// Simulates the online loop against the true environment.
///
/// Every `K` steps a fresh accurate realization `σ*` is drawn; the agent
/// sees its noisy version and the environment follows `σ*` for predictable
/// actions and the kernel otherwise.
pub fn evaluate_agent(
    mdp: &TabularMdp,
    agent: &OnlineAgent,
    channel: &NoiseChannel,
    config: &BolaRunConfig,
) -> Result<BolaReport> {
    if config.episodes == 0 || config.horizon == 0 {
        return Err(Error::invalid("episodes/horizon", "must be at least 1"));
    }
    if config.start_state >= mdp.num_states() {
        return Err(Error::invalid("start_state", "state out of range"));
    }
    let spec = agent.model.spec.clone();
    let mdp_arc = Arc::new(mdp.clone());
    let gamma = mdp.discount();

    let traces = (0..config.episodes)
        .into_par_iter()
        .map(|episode| -> Result<EpisodeTrace> {
            let episode_seed = derive_seed(config.seed, &format!("episode-{episode}"));
            let mut env_oracle =
                PredictionOracle::new(mdp_arc.clone(), spec.clone(), *channel, derive_seed(episode_seed, "oracle"))?;
            let mut rng = seeded(derive_seed(episode_seed, "kernel"));
            let mut s = config.start_state;
            let mut weight = 1.0;
            let mut total = 0.0;
            let mut states = Vec::new();
            let mut actions = Vec::new();
            let mut t = 0;
            while t < config.horizon {
                let (truth, observed) = env_oracle.next_pair();
                let plan = agent.online_step(s, &observed)?;
                for (k, &a) in plan.actions.iter().enumerate() {
                    if t >= config.horizon {
                        break;
                    }
                    if config.record_trajectories {
                        states.push(s);
                        actions.push(a);
                    }
                    total += weight * mdp.reward(s, a);
                    weight *= gamma;
                    s = match truth.step(k + 1).slot(a) {
                        Some(slot) => truth.step(k + 1).successor_at(s, slot),
                        None => sample_categorical(mdp.kernel_row(s, a), rng.random::<f64>()),
                    };
                    t += 1;
                }
            }
            Ok(EpisodeTrace {
                discounted_return: total,
                states,
                actions,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let returns: Vec<f64> = traces.iter().map(|t| t.discounted_return).collect();
    Ok(BolaReport {
        returns: RolloutStats::from_samples(&returns),
        learned_value: agent.learned_value.values.clone(),
        episodes: traces,
    })
}

/// Offline learning followed by online evaluation.
pub fn run_bola(
    mdp: &TabularMdp,
    spec: &PredictionSpec,
    channel: &NoiseChannel,
    config: &BolaRunConfig,
) -> Result<(OnlineAgent, BolaReport)> {
    let agent = learn_offline(
        mdp,
        spec,
        channel,
        config.n1,
        config.n2,
        config.tol,
        config.max_iters,
        derive_seed(config.seed, "offline"),
    )?;
    let report = evaluate_agent(mdp, &agent, channel, &BolaRunConfig {
        seed: derive_seed(config.seed, "online"),
        ..config.clone()
    })?;
    Ok((agent, report))
}

/// Learned-model bundle handed from the offline to the online stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub agent: OnlineAgent,
    pub channel: NoiseChannel,
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> BudgetInputs {
        BudgetInputs {
            gamma: 0.9,
            horizon: 2,
            num_states: 10,
            num_actions: 5,
            num_predictable: 2,
            delta: 0.1,
            epsilon: 0.1,
            alpha: 0.5,
        }
    }

    #[test]
    fn budget_rejects_bad_ranges() {
        for bad in [
            BudgetInputs { alpha: 1.5, ..inputs() },
            BudgetInputs { alpha: 0.0, ..inputs() },
            BudgetInputs { delta: 1.0, ..inputs() },
            BudgetInputs { epsilon: 11.0, ..inputs() },
            BudgetInputs { horizon: 0, ..inputs() },
            BudgetInputs { num_predictable: 6, ..inputs() },
        ] {
            assert!(compute_budget(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn full_predictability_leaves_reward_cost() {
        let b = compute_budget(&BudgetInputs { num_predictable: 5, ..inputs() }).unwrap();
        assert_eq!(b.n1, 0);
        assert_eq!(b.d1, 50);
    }

    #[test]
    fn generative_counts() {
        let mdp = TabularMdp::new(2, 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0.0; 4], 0.5).unwrap();
        let store = sample_generative(&mdp, 7, &[1], 3).unwrap();
        assert_eq!(store.total_draws(), 7 * 2);
        assert!(store.next_states[0].iter().all(|&x| x == 1));
        assert!(store.next_states[1].is_empty());
        assert!(store.next_states[2].iter().all(|&x| x == 0));
        let est = estimate_transitions(&store).unwrap();
        assert_eq!(est.row(0, 0).unwrap(), vec![0.0, 1.0]);
        assert!(est.row(0, 1).is_none());

        let one = sample_generative(&mdp, 1, &[], 3).unwrap();
        assert!(one.next_states.iter().all(|d| d.len() == 1));
    }

    #[test]
    fn frequency_row() {
        let store = GenerativeSamples {
            num_states: 3,
            num_actions: 1,
            n1: 3,
            predictable_actions: vec![],
            next_states: vec![vec![1, 1, 2], vec![0, 0, 0], vec![2, 2, 2]],
            rewards: vec![0.0; 3],
        };
        let est = estimate_transitions(&store).unwrap();
        let row = est.row(0, 0).unwrap();
        assert_eq!(row, vec![0.0, 2.0 / 3.0, 1.0 / 3.0]);

        let missing = GenerativeSamples {
            next_states: vec![vec![], vec![0], vec![0]],
            ..store
        };
        assert!(estimate_transitions(&missing).is_err());
    }
}
