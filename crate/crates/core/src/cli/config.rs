//! Experiment configuration files (TOML or JSON, chosen by extension).

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::BoundParams;
use crate::bola::{compute_budget, BudgetInputs};
use crate::envs::timeseries::SyntheticSeries;
use crate::envs::wind::{WindExperimentSettings, WindStorageConfig};
use crate::envs::RewardLaw;
use crate::error::{Error, Result};
use crate::planner::DEFAULT_ENUMERATION_CAP;
use crate::prediction::NoiseChannel;

/// Reads a config, rejecting unknown fields.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument {
            field: "config".into(),
            message: e.to_string(),
        })
    } else {
        toml::from_str(&text).map_err(|e| Error::InvalidArgument {
            field: "config".into(),
            message: e.to_string(),
        })
    }
}

/// Prefixes the field of a validation error with its config block.
pub(crate) fn in_block<T>(block: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::InvalidArgument { field, message } => Error::InvalidArgument {
            field: format!("{block}.{field}"),
            message,
        },
        other => other,
    })
}

fn positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be positive"))
    }
}

fn at_least_one(field: &str, value: usize) -> Result<()> {
    if value >= 1 {
        Ok(())
    } else {
        Err(Error::invalid(field, "must be at least 1"))
    }
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iters() -> usize {
    100_000
}

fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP
}

fn default_discount() -> f64 {
    0.9
}

fn one() -> usize {
    1
}

/// Where an MDP comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    /// Plain-text or `.json` file; relative paths resolve against the config.
    File { path: PathBuf },
    Random(RandomMdpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default)]
    pub reward_law: RewardLaw,
}

impl MdpSource {
    fn validate(&self) -> Result<()> {
        match self {
            MdpSource::File { .. } => Ok(()),
            MdpSource::Random(r) => {
                at_least_one("num_states", r.num_states)?;
                at_least_one("num_actions", r.num_actions)?;
                if !(r.discount > 0.0 && r.discount < 1.0) {
                    return Err(Error::invalid("discount", "must lie in (0,1)"));
                }
                Ok(())
            }
        }
    }

    /// Resolves relative file paths against `base`.
    pub(crate) fn resolved(&self, base: &Path) -> MdpSource {
        match self {
            MdpSource::File { path } if path.is_relative() => MdpSource::File { path: base.join(path) },
            other => other.clone(),
        }
    }
}

/// Prediction horizon, predictable actions (all when omitted), and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    pub horizon: usize,
    #[serde(default)]
    pub predictable_actions: Option<Vec<usize>>,
    #[serde(default)]
    pub noise: NoiseChannel,
}

impl PredictionConfig {
    fn validate(&self) -> Result<()> {
        at_least_one("horizon", self.horizon)?;
        self.noise.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenMdpConfig {
    pub mdp: RandomMdpConfig,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GenMdpConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("mdp", MdpSource::Random(self.mdp.clone()).validate())?;
        at_least_one("count", self.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub mdp: MdpSource,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("mdp", self.mdp.validate())?;
        positive("tol", self.tol)?;
        at_least_one("max_iters", self.max_iters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    pub mdp: MdpSource,
    pub prediction: PredictionConfig,
    /// Sampled prediction batches; ignored when `exact_law` is set.
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    /// Enumerate the exact law of accurate predictions (small instances).
    #[serde(default)]
    pub exact_law: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_scenarios() -> usize {
    200
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("mdp", self.mdp.validate())?;
        in_block("prediction", self.prediction.validate())?;
        at_least_one("scenarios", self.scenarios)?;
        positive("tol", self.tol)?;
        at_least_one("max_iters", self.max_iters)
    }
}

/// Sample budget: explicit counts, or the closed-form budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    #[serde(default)]
    pub n1: Option<usize>,
    #[serde(default)]
    pub n2: Option<usize>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl BudgetConfig {
    fn has_formula(&self) -> bool {
        self.delta.is_some() || self.epsilon.is_some() || self.alpha.is_some()
    }

    /// Inputs of the closed form, when requested.
    pub(crate) fn formula_inputs(
        &self,
        gamma: f64,
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        num_predictable: usize,
    ) -> Result<Option<BudgetInputs>> {
        if !self.has_formula() {
            return Ok(None);
        }
        let need = |field: &str, v: Option<f64>| v.ok_or_else(|| Error::invalid(field, "required by the budget formula"));
        Ok(Some(BudgetInputs {
            gamma,
            horizon,
            num_states,
            num_actions,
            num_predictable,
            delta: need("delta", self.delta)?,
            epsilon: need("epsilon", self.epsilon)?,
            alpha: need("alpha", self.alpha)?,
        }))
    }

    /// Range checks that need no MDP; `ε < 1/(1-γ)` is checked once `γ` is known.
    fn validate_ranges(&self) -> Result<()> {
        if self.has_formula() {
            let inputs = self.formula_inputs(0.5, 1, 1, 1, 0)?.expect("formula requested");
            for (field, value) in [("delta", inputs.delta), ("alpha", inputs.alpha)] {
                if !(value > 0.0 && value < 1.0) {
                    return Err(Error::invalid(field, "must lie in (0,1)"));
                }
            }
            positive("epsilon", inputs.epsilon)?;
        }
        if self.n1 == Some(0) {
            return Err(Error::invalid("n1", "must be at least 1"));
        }
        if self.n2 == Some(0) {
            return Err(Error::invalid("n2", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BolaStage {
    /// Learn and write the model bundle only.
    Offline,
    /// Load a bundle and evaluate it.
    Online,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BolaConfig {
    pub mdp: MdpSource,
    pub prediction: PredictionConfig,
    pub budget: BudgetConfig,
    #[serde(default)]
    pub stage: BolaStage,
    /// Bundle to load for the online stage.
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_episode_length")]
    pub episode_length: usize,
    #[serde(default)]
    pub start_state: usize,
    #[serde(default)]
    pub record_trajectories: bool,
    /// Refuse closed-form budgets above this many samples per pair.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_episodes() -> usize {
    200
}

fn default_episode_length() -> usize {
    100
}

fn default_max_samples() -> usize {
    10_000_000
}

impl BolaConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("mdp", self.mdp.validate())?;
        in_block("prediction", self.prediction.validate())?;
        in_block("budget", self.budget.validate_ranges())?;
        if self.stage == BolaStage::Online && self.bundle.is_none() {
            return Err(Error::invalid("bundle", "the online stage needs a model bundle"));
        }
        if self.stage != BolaStage::Online
            && !self.budget.has_formula()
            && (self.budget.n1.is_none() || self.budget.n2.is_none())
        {
            return Err(Error::invalid("budget", "give n1 and n2, or delta, epsilon and alpha"));
        }
        at_least_one("episodes", self.episodes)?;
        at_least_one("episode_length", self.episode_length)?;
        positive("tol", self.tol)?;
        at_least_one("max_iters", self.max_iters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub mdp: MdpSource,
    /// Horizon of the truncated offline value.
    pub k: usize,
    pub realizations: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GapConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("mdp", self.mdp.validate())?;
        at_least_one("k", self.k)?;
        at_least_one("realizations", self.realizations)?;
        positive("tol", self.tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub gamma: f64,
    pub horizon: usize,
    pub num_actions: usize,
    pub num_predictable: usize,
    #[serde(default = "unit")]
    pub c1: f64,
    #[serde(default = "unit")]
    pub c2: f64,
    /// Defaults to `1/(1-γ)²`.
    #[serde(default)]
    pub theta_max_sq: Option<f64>,
    /// Per-step errors; a single entry is broadcast to all `K` steps.
    #[serde(default)]
    pub eps_per_step: Vec<f64>,
    #[serde(default = "default_tail")]
    pub tail_truncation: usize,
    /// Optional sample-budget evaluation for `num_states` states.
    #[serde(default)]
    pub budget: Option<BoundBudget>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundBudget {
    pub num_states: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

fn unit() -> f64 {
    1.0
}

fn default_tail() -> usize {
    200
}

impl BoundConfig {
    pub fn params(&self) -> BoundParams {
        let mut params = BoundParams::with_defaults(self.gamma, self.horizon);
        params.c1 = self.c1;
        params.c2 = self.c2;
        if let Some(theta) = self.theta_max_sq {
            params.theta_max_sq = theta;
        }
        params.eps_per_step = match self.eps_per_step.as_slice() {
            [] => vec![0.0; self.horizon],
            [single] => vec![*single; self.horizon],
            many => many.to_vec(),
        };
        params.tail_truncation = self.tail_truncation;
        params
    }

    pub fn budget_inputs(&self) -> Option<BudgetInputs> {
        self.budget.as_ref().map(|b| BudgetInputs {
            gamma: self.gamma,
            horizon: self.horizon,
            num_states: b.num_states,
            num_actions: self.num_actions,
            num_predictable: self.num_predictable,
            delta: b.delta,
            epsilon: b.epsilon,
            alpha: b.alpha,
        })
    }

    pub fn validate(&self) -> Result<()> {
        crate::analysis::evaluate_bound(
            &self.params(),
            self.gamma,
            self.horizon,
            self.num_actions,
            self.num_predictable,
        )?;
        if let Some(inputs) = self.budget_inputs() {
            in_block("budget", compute_budget(&inputs))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindConfig {
    /// Time-series file; a synthetic series is generated when omitted.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// TOML sidecar describing the data file.
    #[serde(default)]
    pub format: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticSeries,
    #[serde(default)]
    pub storage: WindStorageConfig,
    #[serde(default)]
    pub experiment: WindExperimentSettings,
    #[serde(default)]
    pub seed: u64,
}

impl WindConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("storage", self.storage.validate())?;
        in_block("experiment", self.experiment.validate())?;
        if self.data.is_none() && self.synthetic.rows < 2 {
            return Err(Error::invalid("synthetic.rows", "need at least 2 rows"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenWindConfig {
    #[serde(default)]
    pub synthetic: SyntheticSeries,
    #[serde(default)]
    pub seed: u64,
}

impl GenWindConfig {
    pub fn validate(&self) -> Result<()> {
        if self.synthetic.rows < 2 {
            return Err(Error::invalid("synthetic.rows", "need at least 2 rows"));
        }
        if self.synthetic.resolution_secs <= 0 {
            return Err(Error::invalid("synthetic.resolution_secs", "must be positive"));
        }
        positive("synthetic.wind_capacity", self.synthetic.wind_capacity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mdp: RandomMdpConfig,
    /// Number of random MDPs.
    #[serde(default = "one")]
    pub count: usize,
    pub horizons: Vec<usize>,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    /// `(k, realizations)` of an optional `V_off` reference.
    #[serde(default)]
    pub offline_reference: Option<(usize, usize)>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        in_block("mdp", MdpSource::Random(self.mdp.clone()).validate())?;
        at_least_one("count", self.count)?;
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::invalid("horizons", "need at least one K ≥ 1"));
        }
        at_least_one("scenarios", self.scenarios)?;
        positive("tol", self.tol)?;
        at_least_one("max_iters", self.max_iters)
    }
}
