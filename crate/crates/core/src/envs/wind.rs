//! Wind-farm storage control.
//!
//! State `(p, Δ, SoC)`: penalty price, generation mismatch
//! `Δ = actual - forecast`, and battery state of charge. Price and mismatch
//! form the Markov substate (two independent fitted chains); SoC is the
//! deterministic dependent substate. The raw reward is
//! `-[p·max(Δ - v⁺, 0) + p·max(v⁻ - Δ, 0)]`, evaluated literally.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::splittable::{compose_splittable, SplittableMdp};
use super::timeseries::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::planner::ScenarioSet;
use crate::prediction::{apply_noise, NoiseChannel, OneStepPrediction, PredictionBatch};
use crate::rng::{derive_seed, sample_categorical, seeded};

use rand::Rng;

/// Tolerance for SoC bound checks after efficiency scaling.
const SOC_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindStorageConfig {
    /// Battery capacity `C` (kWh).
    pub capacity: f64,
    pub charge_eff: f64,
    pub discharge_eff: f64,
    pub price_levels: usize,
    pub mismatch_levels: usize,
    pub soc_levels: usize,
    pub action_levels: usize,
    /// Largest charge or discharge per step (kWh).
    pub max_power: f64,
    pub discount: f64,
}

impl Default for WindStorageConfig {
    fn default() -> Self {
        WindStorageConfig {
            capacity: 10.0,
            charge_eff: 1.0,
            discharge_eff: 1.0,
            price_levels: 10,
            mismatch_levels: 10,
            soc_levels: 21,
            action_levels: 9,
            max_power: 2.0,
            discount: 0.95,
        }
    }
}

impl WindStorageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::invalid("capacity", "must be positive"));
        }
        for (field, eff) in [("charge_eff", self.charge_eff), ("discharge_eff", self.discharge_eff)] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(Error::invalid(field, "efficiency must lie in (0,1]"));
            }
        }
        for (field, n) in [
            ("price_levels", self.price_levels),
            ("mismatch_levels", self.mismatch_levels),
            ("action_levels", self.action_levels),
        ] {
            if n == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if self.soc_levels < 2 {
            return Err(Error::invalid("soc_levels", "SoC grid needs at least 2 levels"));
        }
        if !(self.max_power >= 0.0 && self.max_power.is_finite()) {
            return Err(Error::invalid("max_power", "must be non-negative"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::invalid("discount", "must lie in (0,1)"));
        }
        Ok(())
    }

    pub fn soc_step(&self) -> f64 {
        self.capacity / (self.soc_levels - 1) as f64
    }

    pub fn soc_grid(&self) -> Vec<f64> {
        (0..self.soc_levels).map(|i| i as f64 * self.soc_step()).collect()
    }

    /// Evenly spaced net powers from `-max_power` (discharge) to
    /// `+max_power` (charge).
    pub fn action_grid(&self) -> Vec<ChargeAction> {
        let n = self.action_levels;
        (0..n)
            .map(|i| {
                let v = if n == 1 {
                    0.0
                } else {
                    -self.max_power + 2.0 * self.max_power * i as f64 / (n - 1) as f64
                };
                ChargeAction::from_net(v)
            })
            .collect()
    }
}

/// `(v⁺, v⁻)`: charge and discharge amounts, at most one non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeAction {
    pub charge: f64,
    pub discharge: f64,
}

impl ChargeAction {
    pub fn from_net(v: f64) -> Self {
        ChargeAction {
            charge: v.max(0.0),
            discharge: (-v).max(0.0),
        }
    }

    pub fn idle() -> Self {
        ChargeAction {
            charge: 0.0,
            discharge: 0.0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.charge >= 0.0 && self.discharge >= 0.0) {
            return Err(Error::invalid("action", "charge and discharge must be non-negative"));
        }
        if self.charge > 0.0 && self.discharge > 0.0 {
            return Err(Error::invalid("action", "cannot charge and discharge at once"));
        }
        Ok(())
    }
}

/// Raw reward `-[p·max(Δ - v⁺, 0) + p·max(v⁻ - Δ, 0)]`.
pub fn wind_reward(price: f64, mismatch: f64, action: ChargeAction) -> Result<f64> {
    action.check()?;
    Ok(-(price * (mismatch - action.charge).max(0.0) + price * (action.discharge - mismatch).max(0.0)))
}

/// `SoC + η⁺v⁺ - η⁻v⁻`, rounded to the nearest grid point. Errors with
/// [`Error::Precondition`] when the action over- or under-runs the battery.
pub fn soc_transition(soc: f64, action: ChargeAction, config: &WindStorageConfig) -> Result<f64> {
    action.check()?;
    let next = soc + config.charge_eff * action.charge - config.discharge_eff * action.discharge;
    if next > config.capacity + SOC_SLACK || next < -SOC_SLACK {
        return Err(Error::Precondition(format!(
            "action {action:?} is infeasible at SoC {soc} (would reach {next})"
        )));
    }
    let index = (next / config.soc_step()).round() as usize;
    Ok(index.min(config.soc_levels - 1) as f64 * config.soc_step())
}

/// Empirical-quantile binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBins {
    /// Bin of each observation, in input order.
    pub assignments: Vec<usize>,
    /// Mean of the observations in each bin.
    pub representatives: Vec<f64>,
}

/// Splits observations into up to `levels` bins by rank; bins left empty
/// by ties are dropped, so a constant series yields a single bin.
pub fn quantile_bins(values: &[f64], levels: usize) -> QuantileBins {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..levels).map(|b| sorted[(b * n) / levels]).collect();
    edges.dedup();
    let raw: Vec<usize> = values.iter().map(|&x| edges.partition_point(|&e| e <= x)).collect();
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let assignments: Vec<usize> = raw.iter().map(|b| used.binary_search(b).expect("bin is used")).collect();
    let mut sums = vec![0.0; used.len()];
    let mut counts = vec![0usize; used.len()];
    for (&b, &x) in assignments.iter().zip(values) {
        sums[b] += x;
        counts[b] += 1;
    }
    QuantileBins {
        assignments,
        representatives: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
    }
}

/// Add-one-smoothed transition matrix of a bin sequence.
pub fn fit_chain(assignments: &[usize], levels: usize) -> Vec<f64> {
    let mut counts = vec![0.0; levels * levels];
    for pair in assignments.windows(2) {
        counts[pair[0] * levels + pair[1]] += 1.0;
    }
    for row in counts.chunks_mut(levels) {
        let total: f64 = row.iter().sum::<f64>() + levels as f64;
        row.iter_mut().for_each(|c| *c = (*c + 1.0) / total);
    }
    counts
}

/// Kronecker product of two row-stochastic matrices.
fn kron(a: &[f64], na: usize, b: &[f64], nb: usize) -> Vec<f64> {
    let n = na * nb;
    let mut out = vec![0.0; n * n];
    for i in 0..na {
        for j in 0..nb {
            for k in 0..na {
                for l in 0..nb {
                    out[(i * nb + j) * n + k * nb + l] = a[i * na + k] * b[j * nb + l];
                }
            }
        }
    }
    out
}

/// Affine map between raw penalties and `[0,1]` rewards:
/// `r = (hi - penalty) / (hi - lo)`. With non-negative prices `lo = 0` and
/// `hi = p_max (Δ_max + v_max)`, i.e. `r = 1 - penalty / penalty_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardMap {
    pub penalty_hi: f64,
    pub penalty_lo: f64,
}

impl RewardMap {
    pub fn to_reward(&self, penalty: f64) -> f64 {
        let span = self.penalty_hi - self.penalty_lo;
        if span > 0.0 {
            ((self.penalty_hi - penalty) / span).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }

    pub fn to_penalty(&self, reward: f64) -> f64 {
        self.penalty_hi - reward * (self.penalty_hi - self.penalty_lo)
    }
}

/// The fitted storage MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindModel {
    pub config: WindStorageConfig,
    pub price_values: Vec<f64>,
    pub mismatch_values: Vec<f64>,
    pub price_chain: Vec<f64>,
    pub mismatch_chain: Vec<f64>,
    pub soc_grid: Vec<f64>,
    pub actions: Vec<ChargeAction>,
    /// Feasibility per `(soc_index, action)`.
    pub feasible: Vec<bool>,
    pub reward_map: RewardMap,
    /// Markov-substate index of each observation.
    pub observed_states: Vec<usize>,
    pub splittable: SplittableMdp,
    pub warnings: Vec<String>,
}

impl WindModel {
    pub fn markov_state(&self, price_bin: usize, mismatch_bin: usize) -> usize {
        price_bin * self.mismatch_values.len() + mismatch_bin
    }

    /// `(price, mismatch)` of a Markov state.
    pub fn markov_values(&self, m: usize) -> (f64, f64) {
        let nm = self.mismatch_values.len();
        (self.price_values[m / nm], self.mismatch_values[m % nm])
    }

    pub fn is_feasible(&self, soc_index: usize, a: usize) -> bool {
        self.feasible[soc_index * self.actions.len() + a]
    }

    /// Index of the do-nothing action.
    pub fn idle_action(&self) -> Option<usize> {
        self.actions.iter().position(|a| *a == ChargeAction::idle())
    }

    /// Raw penalty (positive cost) of an action in a Markov state.
    pub fn penalty(&self, m: usize, a: usize) -> f64 {
        let (p, delta) = self.markov_values(m);
        -wind_reward(p, delta, self.actions[a]).expect("grid actions are valid")
    }
}

/// Bins price and mismatch by quantiles, fits both chains, and assembles
/// the splittable MDP with SoC as the dependent substate.
pub fn discretize_and_fit(dataset: &TimeSeriesDataset, config: &WindStorageConfig) -> Result<WindModel> {
    config.validate()?;
    if dataset.rows.len() < 2 {
        return Err(Error::invalid("dataset", "need at least 2 rows"));
    }
    let prices: Vec<f64> = dataset.rows.iter().map(|r| r.price).collect();
    let mismatches: Vec<f64> = dataset.rows.iter().map(|r| r.mismatch()).collect();
    let price_bins = quantile_bins(&prices, config.price_levels);
    let mismatch_bins = quantile_bins(&mismatches, config.mismatch_levels);
    let mut warnings = Vec::new();
    for (name, bins, wanted) in [
        ("price", &price_bins, config.price_levels),
        ("mismatch", &mismatch_bins, config.mismatch_levels),
    ] {
        if bins.representatives.len() < wanted {
            let msg = format!(
                "{name} series supports only {} of {wanted} bins; collapsed",
                bins.representatives.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    let np = price_bins.representatives.len();
    let nm = mismatch_bins.representatives.len();
    let price_chain = fit_chain(&price_bins.assignments, np);
    let mismatch_chain = fit_chain(&mismatch_bins.assignments, nm);
    let chain = kron(&price_chain, np, &mismatch_chain, nm);

    let soc_grid = config.soc_grid();
    let actions = config.action_grid();
    let nd = soc_grid.len();
    let na = actions.len();
    let mut feasible = vec![false; nd * na];
    let mut kernel = vec![0.0; nd * na * nd];
    for (d, &soc) in soc_grid.iter().enumerate() {
        for (a, &action) in actions.iter().enumerate() {
            // Infeasible actions keep SoC in place; their reward is set to the
            // minimum so they never beat the idle action.
            let next = match soc_transition(soc, action, config) {
                Ok(next) => {
                    feasible[d * na + a] = true;
                    (next / config.soc_step()).round() as usize
                }
                Err(_) => d,
            };
            kernel[(d * na + a) * nd + next] = 1.0;
        }
    }

    let price_max = price_bins.representatives.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let mismatch_max = mismatch_bins.representatives.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut penalty_hi = price_max * (mismatch_max + config.max_power);
    let mut penalty_lo = 0.0f64;
    for &p in &price_bins.representatives {
        for &delta in &mismatch_bins.representatives {
            for &action in &actions {
                let penalty = -wind_reward(p, delta, action)?;
                penalty_hi = penalty_hi.max(penalty);
                penalty_lo = penalty_lo.min(penalty);
            }
        }
    }
    let reward_map = RewardMap { penalty_hi, penalty_lo };

    let markov = np * nm;
    let mut reward = vec![0.0; markov * nd * na];
    for m in 0..markov {
        let (p, delta) = (price_bins.representatives[m / nm], mismatch_bins.representatives[m % nm]);
        for d in 0..nd {
            for (a, &action) in actions.iter().enumerate() {
                if feasible[d * na + a] {
                    reward[(m * nd + d) * na + a] = reward_map.to_reward(-wind_reward(p, delta, action)?);
                }
            }
        }
    }
    let splittable = compose_splittable(markov, chain, nd, na, kernel, reward, config.discount)?;
    let observed_states = price_bins
        .assignments
        .iter()
        .zip(&mismatch_bins.assignments)
        .map(|(&p, &x)| p * nm + x)
        .collect();
    Ok(WindModel {
        config: config.clone(),
        price_values: price_bins.representatives,
        mismatch_values: mismatch_bins.representatives,
        price_chain,
        mismatch_chain,
        soc_grid,
        actions,
        feasible,
        reward_map,
        observed_states,
        splittable,
        warnings,
    })
}

/// Settings of the prediction-versus-baseline storage experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindExperimentSettings {
    pub horizons: Vec<usize>,
    /// `η` values of a uniform-mix channel on the Markov-substate predictions.
    pub noise_levels: Vec<f64>,
    /// Prediction batches per scenario set.
    pub scenarios: usize,
    pub episodes: usize,
    pub episode_length: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Initial SoC as a fraction of capacity.
    pub initial_soc_fraction: f64,
    /// Weight step `t` penalties by `γ^t` instead of summing them.
    pub discounted_cost: bool,
}

impl Default for WindExperimentSettings {
    fn default() -> Self {
        WindExperimentSettings {
            horizons: vec![1, 2, 3, 4],
            noise_levels: vec![0.0, 0.1, 0.2, 0.3],
            scenarios: 100,
            episodes: 200,
            episode_length: 96,
            tol: 1e-4,
            max_iters: 10_000,
            initial_soc_fraction: 0.5,
            discounted_cost: true,
        }
    }
}

impl WindExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::invalid("horizons", "need at least one K ≥ 1"));
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::invalid("noise_levels", "need at least one η in [0,1]"));
        }
        for (field, n) in [
            ("scenarios", self.scenarios),
            ("episodes", self.episodes),
            ("episode_length", self.episode_length),
        ] {
            if n == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.initial_soc_fraction) {
            return Err(Error::invalid("initial_soc_fraction", "must lie in [0,1]"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindPoint {
    pub horizon: usize,
    pub eta: f64,
    /// Mean undiscounted episode penalty.
    pub mean_cost: f64,
    /// `100 · (baseline - cost) / baseline`.
    pub saving_pct: f64,
    /// Standard error of the saving from paired episode differences.
    pub saving_stderr_pct: f64,
    pub bayes_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindReport {
    pub baseline_cost: f64,
    pub points: Vec<WindPoint>,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// One accurate Markov-substate batch from a pre-drawn realization table.
fn realized_batch(successors: &[Vec<usize>], nm: usize) -> Result<PredictionBatch> {
    let actions: std::sync::Arc<[usize]> = vec![0].into();
    let steps = successors
        .iter()
        .map(|succ| {
            let mut rows = vec![0.0; nm * nm];
            for (m, &next) in succ.iter().enumerate() {
                rows[m * nm + next] = 1.0;
            }
            OneStepPrediction::new(nm, actions.clone(), rows)
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionBatch::new(steps, true)
}

struct Episode {
    start_m: usize,
    /// `successors[t][m]`: realized next Markov state at step `t`.
    successors: Vec<Vec<usize>>,
}

impl WindModel {
    fn draw_episode(&self, length: usize, seed: u64) -> Episode {
        let mut rng = seeded(seed);
        let nm = self.splittable.markov_states();
        let start_m = self.observed_states[rng.random_range(0..self.observed_states.len())];
        let successors = (0..length)
            .map(|_| {
                (0..nm)
                    .map(|m| sample_categorical(self.splittable.chain_row(m), rng.random::<f64>()))
                    .collect()
            })
            .collect();
        Episode { start_m, successors }
    }

    fn safe_action(&self, d: usize, a: usize) -> usize {
        if self.is_feasible(d, a) {
            a
        } else {
            self.idle_action().unwrap_or(a)
        }
    }

    fn soc_successor(&self, d: usize, a: usize) -> usize {
        let row = self.splittable.dependent_row(d, a);
        row.iter().position(|&p| p == 1.0).expect("deterministic SoC kernel")
    }

    fn baseline_cost(&self, v_mdp: &[f64], ep: &Episode, d0: usize, gamma: f64) -> f64 {
        let (mut m, mut d) = (ep.start_m, d0);
        let mut cost = 0.0;
        let mut weight = 1.0;
        for succ in &ep.successors {
            let a = self.safe_action(d, self.splittable.greedy_action(v_mdp, m, d));
            cost += weight * self.penalty(m, a);
            weight *= gamma;
            d = self.soc_successor(d, a);
            m = succ[m];
        }
        cost
    }

    fn prediction_cost(
        &self,
        terminal: &[f64],
        ep: &Episode,
        d0: usize,
        horizon: usize,
        channel: &NoiseChannel,
        noise_seed: u64,
        gamma: f64,
    ) -> Result<f64> {
        let nm = self.splittable.markov_states();
        let (mut m, mut d) = (ep.start_m, d0);
        let mut cost = 0.0;
        let mut weight = 1.0;
        let mut t = 0;
        while t < ep.successors.len() {
            let end = (t + horizon).min(ep.successors.len());
            let mut window = ep.successors[t..end].to_vec();
            // Past the episode end the forecast still covers K steps.
            while window.len() < horizon {
                window.push(window.last().cloned().unwrap_or_else(|| (0..nm).collect()));
            }
            let truth = realized_batch(&window, nm)?;
            let observed = apply_noise(&truth, channel, derive_seed(noise_seed, &format!("block-{t}")))?;
            let plan = self.splittable.plan(&observed, m, d, terminal)?;
            for (k, &a) in plan.actions.iter().enumerate().take(end - t) {
                let a = self.safe_action(d, a);
                cost += weight * self.penalty(m, a);
                weight *= gamma;
                d = self.soc_successor(d, a);
                m = ep.successors[t + k][m];
            }
            t = end;
        }
        Ok(cost)
    }
}

/// Compares an open-loop prediction-aware controller (terminal value: the
/// Bayesian value under the same noisy prediction law) against the greedy
/// policy of the prediction-free optimum, on common realized trajectories.
pub fn run_wind_experiment(model: &WindModel, settings: &WindExperimentSettings, seed: u64) -> Result<WindReport> {
    settings.validate()?;
    let sm = &model.splittable;
    let v_mdp = sm.value_iteration(settings.tol, settings.max_iters)?.values.into_inner();
    let d0 = ((model.soc_grid.len() - 1) as f64 * settings.initial_soc_fraction).round() as usize;
    let episodes: Vec<Episode> = (0..settings.episodes)
        .map(|e| model.draw_episode(settings.episode_length, derive_seed(seed, &format!("wind-episode-{e}"))))
        .collect();
    let gamma = if settings.discounted_cost { sm.discount() } else { 1.0 };
    let baseline: Vec<f64> = episodes
        .par_iter()
        .map(|ep| model.baseline_cost(&v_mdp, ep, d0, gamma))
        .collect();
    let baseline_cost = baseline.iter().sum::<f64>() / baseline.len() as f64;

    let mut points = Vec::new();
    for &horizon in &settings.horizons {
        for &eta in &settings.noise_levels {
            let channel = if eta == 0.0 {
                NoiseChannel::None
            } else {
                NoiseChannel::UniformMix { eta }
            };
            let oracle = sm.markov_oracle(
                horizon,
                channel,
                derive_seed(seed, &format!("wind-scenarios-k{horizon}-eta{eta}")),
            )?;
            let scenarios = ScenarioSet::uniform(oracle.take(settings.scenarios).collect())?;
            let learned = sm.bayes_value_iteration(&scenarios, settings.tol, settings.max_iters)?;
            let costs = episodes
                .par_iter()
                .enumerate()
                .map(|(e, ep)| {
                    model.prediction_cost(
                        &learned.values,
                        ep,
                        d0,
                        horizon,
                        &channel,
                        derive_seed(seed, &format!("wind-noise-{e}")),
                        gamma,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
            let diffs: Vec<f64> = baseline.iter().zip(&costs).map(|(b, c)| b - c).collect();
            let n = diffs.len() as f64;
            let mean_diff = diffs.iter().sum::<f64>() / n;
            let sd = if diffs.len() > 1 {
                (diffs.iter().map(|x| (x - mean_diff).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let scale = if baseline_cost != 0.0 { 100.0 / baseline_cost } else { 0.0 };
            points.push(WindPoint {
                horizon,
                eta,
                mean_cost,
                saving_pct: mean_diff * scale,
                saving_stderr_pct: sd / n.sqrt() * scale.abs(),
                bayes_iterations: learned.iterations,
            });
        }
    }
    Ok(WindReport { baseline_cost, points })
}
