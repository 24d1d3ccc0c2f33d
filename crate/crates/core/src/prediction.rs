//! Multi-step transition predictions.
//!
//! A prediction batch `σ = (σ_1, …, σ_K)` carries, for each future step and
//! each predictable pair `(s, a ∈ A⁻)`, a distribution over the next state.
//! Accurate batches are one-hot realizations drawn from the kernel; noisy
//! batches are produced from them by a [`NoiseChannel`].

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, ROW_SUM_TOL};
use crate::rng::{sample_categorical, sample_dirichlet, seeded, SimRng};

/// Prediction horizon `K` and predictable action set `A⁻`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSpec {
    horizon: usize,
    predictable_actions: Vec<usize>,
}

impl PredictionSpec {
    /// `predictable_actions` is sorted and deduplicated.
    pub fn new(horizon: usize, mut predictable_actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon", "K must be at least 1"));
        }
        predictable_actions.sort_unstable();
        predictable_actions.dedup();
        if let Some(&a) = predictable_actions.iter().find(|&&a| a >= num_actions) {
            return Err(Error::invalid(
                "predictable_actions",
                format!("action {a} outside 0..{num_actions}"),
            ));
        }
        Ok(PredictionSpec {
            horizon,
            predictable_actions,
        })
    }

    /// `A⁻ = A`.
    pub fn full(horizon: usize, num_actions: usize) -> Result<Self> {
        Self::new(horizon, (0..num_actions).collect(), num_actions)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn predictable_actions(&self) -> &[usize] {
        &self.predictable_actions
    }

    pub fn covers_all(&self, num_actions: usize) -> bool {
        self.predictable_actions.len() == num_actions
    }
}

/// One step `σ_k`: a `|S||A⁻| × |S|` row-stochastic matrix.
///
/// Row `(s, a)` lives at index `s * |A⁻| + slot(a)` where `slot` is the
/// position of `a` in the sorted predictable action list.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepPrediction {
    num_states: usize,
    predictable_actions: Arc<[usize]>,
    rows: Vec<f64>,
}

impl OneStepPrediction {
    pub fn new(num_states: usize, predictable_actions: Arc<[usize]>, rows: Vec<f64>) -> Result<Self> {
        let expected = num_states * predictable_actions.len() * num_states;
        if rows.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "prediction step has {} entries, expected {expected}",
                rows.len()
            )));
        }
        for (i, row) in rows.chunks(num_states.max(1)).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(
                    "prediction",
                    format!("row {i} is not a probability vector"),
                ));
            }
        }
        Ok(OneStepPrediction {
            num_states,
            predictable_actions,
            rows,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn predictable_actions(&self) -> &[usize] {
        &self.predictable_actions
    }

    #[inline]
    pub fn slot(&self, a: usize) -> Option<usize> {
        self.predictable_actions.iter().position(|&b| b == a)
    }

    #[inline]
    pub fn row_at(&self, s: usize, slot: usize) -> &[f64] {
        let start = (s * self.predictable_actions.len() + slot) * self.num_states;
        &self.rows[start..start + self.num_states]
    }

    /// `σ_k((s,a), ·)` for `a ∈ A⁻`.
    pub fn row(&self, s: usize, a: usize) -> Option<&[f64]> {
        self.slot(a).map(|slot| self.row_at(s, slot))
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Predicted successor when every row is one-hot.
    pub(crate) fn successor_at(&self, s: usize, slot: usize) -> usize {
        self.row_at(s, slot)
            .iter()
            .position(|&p| p == 1.0)
            .expect("accurate prediction rows are one-hot")
    }

    fn is_one_hot(&self) -> bool {
        self.rows
            .chunks(self.num_states.max(1))
            .all(|row| row.iter().filter(|&&p| p == 1.0).count() == 1 && row.iter().all(|&p| p == 0.0 || p == 1.0))
    }
}

/// A `K`-step prediction `σ = (σ_1, …, σ_K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatchDocument", into = "BatchDocument")]
pub struct PredictionBatch {
    steps: Vec<OneStepPrediction>,
    accurate: bool,
}

impl PredictionBatch {
    pub fn new(steps: Vec<OneStepPrediction>, accurate: bool) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| Error::invalid("horizon", "a batch needs at least one step"))?;
        if steps.iter().any(|st| {
            st.num_states != first.num_states || st.predictable_actions != first.predictable_actions
        }) {
            return Err(Error::ShapeMismatch("batch steps differ in shape".into()));
        }
        if accurate && !steps.iter().all(OneStepPrediction::is_one_hot) {
            return Err(Error::invalid("accurate", "accurate batches must be one-hot"));
        }
        Ok(PredictionBatch { steps, accurate })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn num_states(&self) -> usize {
        self.steps[0].num_states
    }

    pub fn predictable_actions(&self) -> &[usize] {
        &self.steps[0].predictable_actions
    }

    pub fn is_accurate(&self) -> bool {
        self.accurate
    }

    /// `σ_k` for `k ∈ 1..=K`.
    pub fn step(&self, k: usize) -> &OneStepPrediction {
        &self.steps[k - 1]
    }

    pub fn steps(&self) -> &[OneStepPrediction] {
        &self.steps
    }

    pub(crate) fn same_shape(&self, other: &PredictionBatch) -> bool {
        self.horizon() == other.horizon()
            && self.num_states() == other.num_states()
            && self.predictable_actions() == other.predictable_actions()
    }

    pub(crate) fn matches_spec(&self, spec: &PredictionSpec, num_states: usize) -> bool {
        self.horizon() == spec.horizon()
            && self.num_states() == num_states
            && self.predictable_actions() == spec.predictable_actions()
    }
}

/// Replay-file form of a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchDocument {
    pub horizon: usize,
    pub num_states: usize,
    pub predictable_actions: Vec<usize>,
    pub accurate: bool,
    /// One row-major `|S||A⁻| × |S|` matrix per step.
    pub steps: Vec<Vec<f64>>,
}

impl TryFrom<BatchDocument> for PredictionBatch {
    type Error = Error;

    fn try_from(doc: BatchDocument) -> Result<Self> {
        if doc.steps.len() != doc.horizon {
            return Err(Error::ShapeMismatch(format!(
                "document declares K={} but holds {} steps",
                doc.horizon,
                doc.steps.len()
            )));
        }
        let actions: Arc<[usize]> = doc.predictable_actions.into();
        let steps = doc
            .steps
            .into_iter()
            .map(|rows| OneStepPrediction::new(doc.num_states, actions.clone(), rows))
            .collect::<Result<Vec<_>>>()?;
        PredictionBatch::new(steps, doc.accurate)
    }
}

impl From<PredictionBatch> for BatchDocument {
    fn from(batch: PredictionBatch) -> Self {
        BatchDocument {
            horizon: batch.horizon(),
            num_states: batch.num_states(),
            predictable_actions: batch.predictable_actions().to_vec(),
            accurate: batch.accurate,
            steps: batch.steps.into_iter().map(|st| st.rows).collect(),
        }
    }
}

/// Error model `f_{ε|σ*}` applied row by row to accurate predictions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseChannel {
    #[default]
    None,
    /// `σ = (1-η) σ* + η · Uniform(S)`.
    UniformMix { eta: f64 },
    /// Each row redrawn from `Dirichlet(c · σ*_row + 1/|S|)`.
    DirichletJitter { concentration: f64 },
}

impl NoiseChannel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseChannel::None => Ok(()),
            NoiseChannel::UniformMix { eta } if (0.0..=1.0).contains(&eta) => Ok(()),
            NoiseChannel::UniformMix { eta } => {
                Err(Error::invalid("eta", format!("{eta} not in [0,1]")))
            }
            NoiseChannel::DirichletJitter { concentration }
                if concentration > 0.0 && concentration.is_finite() =>
            {
                Ok(())
            }
            NoiseChannel::DirichletJitter { concentration } => Err(Error::invalid(
                "concentration",
                format!("{concentration} must be positive"),
            )),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, NoiseChannel::None | NoiseChannel::UniformMix { eta: 0.0 })
    }

    /// Corrupts one probability row in place.
    pub fn corrupt_row<R: Rng + ?Sized>(&self, row: &mut [f64], rng: &mut R) {
        let n = row.len() as f64;
        match *self {
            NoiseChannel::None => {}
            NoiseChannel::UniformMix { eta } => {
                if eta > 0.0 {
                    row.iter_mut().for_each(|p| *p = (1.0 - eta) * *p + eta / n);
                }
            }
            NoiseChannel::DirichletJitter { concentration } => {
                let alpha: Vec<f64> = row.iter().map(|&p| concentration * p + 1.0 / n).collect();
                row.copy_from_slice(&sample_dirichlet(&alpha, rng));
            }
        }
    }
}

/// Draws an accurate realization `σ*` from the kernel.
pub fn sample_realization(mdp: &TabularMdp, spec: &PredictionSpec, seed: u64) -> Result<PredictionBatch> {
    check_spec(mdp, spec)?;
    let mut rng = seeded(seed);
    Ok(draw_realization(mdp, spec, &mut rng))
}

fn check_spec(mdp: &TabularMdp, spec: &PredictionSpec) -> Result<()> {
    if spec.predictable_actions().is_empty() {
        return Err(Error::invalid(
            "predictable_actions",
            "empty A⁻ leaves nothing to realize",
        ));
    }
    check_spec_actions(mdp, spec)
}

/// The oracle also serves an empty `A⁻`, yielding batches without rows.
fn check_spec_actions(mdp: &TabularMdp, spec: &PredictionSpec) -> Result<()> {
    if spec.predictable_actions().iter().any(|&a| a >= mdp.num_actions()) {
        return Err(Error::invalid("predictable_actions", "action outside the MDP"));
    }
    Ok(())
}

pub(crate) fn draw_realization<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    spec: &PredictionSpec,
    rng: &mut R,
) -> PredictionBatch {
    let ns = mdp.num_states();
    let actions: Arc<[usize]> = spec.predictable_actions().into();
    let steps = (0..spec.horizon())
        .map(|_| {
            let mut rows = vec![0.0; ns * actions.len() * ns];
            for s in 0..ns {
                for (slot, &a) in actions.iter().enumerate() {
                    let next = sample_categorical(mdp.kernel_row(s, a), rng.random::<f64>());
                    rows[(s * actions.len() + slot) * ns + next] = 1.0;
                }
            }
            OneStepPrediction {
                num_states: ns,
                predictable_actions: actions.clone(),
                rows,
            }
        })
        .collect();
    PredictionBatch {
        steps,
        accurate: true,
    }
}

/// Corrupts a batch with the given channel.
pub fn apply_noise(batch: &PredictionBatch, channel: &NoiseChannel, seed: u64) -> Result<PredictionBatch> {
    channel.validate()?;
    let mut rng = seeded(seed);
    Ok(noisy_copy(batch, channel, &mut rng))
}

pub(crate) fn noisy_copy<R: Rng + ?Sized>(
    batch: &PredictionBatch,
    channel: &NoiseChannel,
    rng: &mut R,
) -> PredictionBatch {
    if channel.is_identity() {
        return batch.clone();
    }
    if !batch.accurate {
        log::warn!("applying noise to a batch that is already noisy");
    }
    let steps = batch
        .steps
        .iter()
        .map(|st| {
            let mut rows = st.rows.clone();
            for row in rows.chunks_mut(st.num_states) {
                channel.corrupt_row(row, rng);
            }
            OneStepPrediction { rows, ..st.clone() }
        })
        .collect();
    PredictionBatch {
        steps,
        accurate: false,
    }
}

/// `P(· | s, a, σ_k)`: the prediction row for `a ∈ A⁻`, the kernel otherwise.
#[inline]
pub fn conditioned_transition<'a>(
    mdp: &'a TabularMdp,
    sigma_k: &'a OneStepPrediction,
    s: usize,
    a: usize,
) -> &'a [f64] {
    match sigma_k.slot(a) {
        Some(slot) => sigma_k.row_at(s, slot),
        None => mdp.kernel_row(s, a),
    }
}

/// Sampler of i.i.d. prediction batches (the prediction oracle).
///
/// Holds its own RNG; use [`PredictionOracle::split`] for per-worker streams.
#[derive(Debug, Clone)]
pub struct PredictionOracle {
    mdp: Arc<TabularMdp>,
    spec: PredictionSpec,
    channel: NoiseChannel,
    rng: SimRng,
    seed: u64,
}

impl PredictionOracle {
    pub fn new(mdp: Arc<TabularMdp>, spec: PredictionSpec, channel: NoiseChannel, seed: u64) -> Result<Self> {
        check_spec_actions(&mdp, &spec)?;
        channel.validate()?;
        Ok(PredictionOracle {
            mdp,
            spec,
            channel,
            rng: seeded(seed),
            seed,
        })
    }

    pub fn spec(&self) -> &PredictionSpec {
        &self.spec
    }

    pub fn channel(&self) -> &NoiseChannel {
        &self.channel
    }

    /// Draws `σ*` and passes it through the channel.
    pub fn next_batch(&mut self) -> PredictionBatch {
        let accurate = draw_realization(&self.mdp, &self.spec, &mut self.rng);
        noisy_copy(&accurate, &self.channel, &mut self.rng)
    }

    /// Returns the accurate realization together with its noisy version.
    pub fn next_pair(&mut self) -> (PredictionBatch, PredictionBatch) {
        let accurate = draw_realization(&self.mdp, &self.spec, &mut self.rng);
        let noisy = noisy_copy(&accurate, &self.channel, &mut self.rng);
        (accurate, noisy)
    }

    /// Independent sub-oracles, one per worker.
    pub fn split(&self, workers: usize) -> Vec<PredictionOracle> {
        (0..workers)
            .map(|w| {
                let seed = crate::rng::derive_seed(self.seed, &format!("oracle-worker-{w}"));
                PredictionOracle {
                    rng: seeded(seed),
                    seed,
                    ..self.clone()
                }
            })
            .collect()
    }
}

impl Iterator for PredictionOracle {
    type Item = PredictionBatch;

    fn next(&mut self) -> Option<PredictionBatch> {
        Some(self.next_batch())
    }
}

/// Total-variation distance `½‖p - q‖₁`, which is the Wasserstein-1
/// distance under the discrete metric on states.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Per-step prediction error `ε_j`: the largest row-wise W1 (TV) distance.
pub fn estimate_error_per_step(accurate: &PredictionBatch, noisy: &PredictionBatch) -> Result<Vec<f64>> {
    if !accurate.same_shape(noisy) {
        return Err(Error::ShapeMismatch("batches differ in shape".into()));
    }
    let ns = accurate.num_states();
    Ok(accurate
        .steps
        .iter()
        .zip(&noisy.steps)
        .map(|(a, b)| {
            a.rows
                .chunks(ns)
                .zip(b.rows.chunks(ns))
                .map(|(p, q)| total_variation(p, q))
                .fold(0.0, f64::max)
        })
        .collect())
}
