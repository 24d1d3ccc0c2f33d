//! Finite discounted MDPs `(S, A, P, r, γ)` and the classical (prediction-free)
//! solvers that serve as the `V*_MDP` baseline.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod solve;
pub mod text;

pub use solve::{
    bellman_apply, classical_value_iteration, greedy_policy, q_value, rollout_return,
    RolloutStats, ValueIterationResult,
};

/// Probability rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A validated tabular MDP. Immutable once constructed.
///
/// Transitions are stored row-major: row `(s, a)` starts at
/// `(s * |A| + a) * |S|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    /// Builds an MDP from flat row-major tables, rejecting anything that
    /// fails [`validate_parts`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let report = validate_parts(num_states, num_actions, &transition, &reward, discount);
        if !report.is_pass() {
            return Err(Error::InvalidMdp(report));
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
        })
    }

    /// Explicit repair path: rescales every transition row with a positive
    /// mass to sum to one before validating. Negative entries are not repaired.
    pub fn with_renormalized_rows(
        num_states: usize,
        num_actions: usize,
        mut transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states > 0 && transition.len() == num_states * num_actions * num_states {
            for row in transition.chunks_mut(num_states) {
                let sum: f64 = row.iter().sum();
                if sum > 0.0 && sum.is_finite() {
                    row.iter_mut().for_each(|p| *p /= sum);
                }
            }
        }
        Self::new(num_states, num_actions, transition, reward, discount)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `P(· | s, a)`.
    #[inline]
    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn transition_table(&self) -> &[f64] {
        &self.transition
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    /// `1 / (1 - γ)`, the largest attainable discounted return.
    pub fn value_upper_bound(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }
}

/// One broken invariant, with the offending indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptySpace { what: String },
    TableLength { table: String, expected: usize, found: usize },
    Discount { value: f64 },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64 },
    RewardRange { state: usize, action: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace { what } => write!(f, "{what} space is empty"),
            Violation::TableLength { table, expected, found } => {
                write!(f, "{table} table has {found} entries, expected {expected}")
            }
            Violation::Discount { value } => write!(f, "discount {value} not in (0,1)"),
            Violation::NegativeProbability { state, action, next, value } => write!(
                f,
                "negative probability {value} at (s={state},a={action}) -> {next}"
            ),
            Violation::RowSum { state, action, sum } => {
                write!(f, "row (s={state},a={action}) sums to {sum}")
            }
            Violation::RewardRange { state, action, value } => write!(
                f,
                "reward out of [0,1] at (s={state},a={action}): {value}"
            ),
        }
    }
}

/// Result of [`validate_parts`] / [`validate_mdp`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a raw MDP description.
pub fn validate_parts(
    num_states: usize,
    num_actions: usize,
    transition: &[f64],
    reward: &[f64],
    discount: f64,
) -> ValidationReport {
    let mut violations = Vec::new();
    if num_states == 0 {
        violations.push(Violation::EmptySpace { what: "state".into() });
    }
    if num_actions == 0 {
        violations.push(Violation::EmptySpace { what: "action".into() });
    }
    if !(discount > 0.0 && discount < 1.0) {
        violations.push(Violation::Discount { value: discount });
    }
    let pairs = num_states * num_actions;
    if transition.len() != pairs * num_states {
        violations.push(Violation::TableLength {
            table: "transition".into(),
            expected: pairs * num_states,
            found: transition.len(),
        });
    }
    if reward.len() != pairs {
        violations.push(Violation::TableLength {
            table: "reward".into(),
            expected: pairs,
            found: reward.len(),
        });
    }
    if !violations.is_empty() {
        return ValidationReport { violations };
    }

    for s in 0..num_states {
        for a in 0..num_actions {
            let start = (s * num_actions + a) * num_states;
            let row = &transition[start..start + num_states];
            for (next, &p) in row.iter().enumerate() {
                if !(p >= 0.0) {
                    violations.push(Violation::NegativeProbability {
                        state: s,
                        action: a,
                        next,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                violations.push(Violation::RowSum { state: s, action: a, sum });
            }
            let r = reward[s * num_actions + a];
            if !(0.0..=1.0).contains(&r) {
                violations.push(Violation::RewardRange { state: s, action: a, value: r });
            }
        }
    }
    ValidationReport { violations }
}

pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    validate_parts(
        mdp.num_states,
        mdp.num_actions,
        &mdp.transition,
        &mdp.reward,
        mdp.discount,
    )
}

/// Structured-object form: `transition[s][a][s']`, `reward[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let shape_ok = doc.reward.len() == doc.num_states
            && doc.transition.len() == doc.num_states
            && doc.reward.iter().all(|r| r.len() == doc.num_actions)
            && doc.transition.iter().all(|per_state| {
                per_state.len() == doc.num_actions
                    && per_state.iter().all(|row| row.len() == doc.num_states)
            });
        if !shape_ok {
            return Err(Error::ShapeMismatch(format!(
                "MDP document tables do not match |S|={} |A|={}",
                doc.num_states, doc.num_actions
            )));
        }
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        let reward = doc.reward.into_iter().flatten().collect();
        TabularMdp::new(doc.num_states, doc.num_actions, transition, reward, doc.discount)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        let (ns, na) = (mdp.num_states, mdp.num_actions);
        MdpDocument {
            num_states: ns,
            num_actions: na,
            discount: mdp.discount,
            reward: mdp.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            transition: mdp
                .transition
                .chunks(na * ns)
                .map(|per_state| per_state.chunks(ns).map(<[f64]>::to_vec).collect())
                .collect(),
        }
    }
}

/// Per-state values in units of discounted reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueVector(Vec<f64>);

impl ValueVector {
    pub fn new(values: Vec<f64>) -> Self {
        ValueVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        ValueVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `max_s |self(s) - other(s)|`.
    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        sup_distance(&self.0, other)
    }
}

impl Deref for ValueVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ValueVector {
    fn from(values: Vec<f64>) -> Self {
        ValueVector(values)
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A stationary policy: one action per state, or a distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTable {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl PolicyTable {
    pub fn num_states(&self) -> usize {
        match self {
            PolicyTable::Deterministic(actions) => actions.len(),
            PolicyTable::Stochastic(rows) => rows.len(),
        }
    }

    /// Checks action ranges and that distribution rows are stochastic.
    pub fn check(&self, num_actions: usize) -> Result<()> {
        match self {
            PolicyTable::Deterministic(actions) => {
                if let Some((s, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= num_actions)
                {
                    return Err(Error::invalid(
                        "policy",
                        format!("action {a} at state {s} out of range"),
                    ));
                }
            }
            PolicyTable::Stochastic(rows) => {
                for (s, row) in rows.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.len() != num_actions
                        || row.iter().any(|&p| !(p >= 0.0))
                        || (sum - 1.0).abs() > ROW_SUM_TOL
                    {
                        return Err(Error::invalid(
                            "policy",
                            format!("row {s} is not a distribution over {num_actions} actions"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> (Vec<f64>, Vec<f64>) {
        (vec![0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.2, 0.8], vec![0.1, 0.2, 0.3, 0.4])
    }

    #[test]
    fn well_formed_passes() {
        let (t, r) = two_state();
        assert!(validate_parts(2, 2, &t, &r, 0.9).is_pass());
        assert!(TabularMdp::new(2, 2, t, r, 0.9).is_ok());
    }

    #[test]
    fn short_row_reports_the_pair() {
        let (mut t, r) = two_state();
        t[1] = 0.4;
        let report = validate_parts(2, 2, &t, &r, 0.9);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::RowSum { state, action, sum } => {
                assert_eq!((*state, *action), (0, 0));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reward_out_of_range() {
        let (t, mut r) = two_state();
        r[3] = 1.5;
        let report = validate_parts(2, 2, &t, &r, 0.9);
        assert!(report.to_string().contains("reward out of [0,1]"));
        assert!(matches!(
            report.violations[0],
            Violation::RewardRange { state: 1, action: 1, .. }
        ));
    }

    #[test]
    fn discount_and_lengths() {
        let (t, r) = two_state();
        assert!(!validate_parts(2, 2, &t, &r, 1.0).is_pass());
        assert!(!validate_parts(2, 2, &t, &r, 0.0).is_pass());
        assert!(!validate_parts(2, 2, &t[..7], &r, 0.5).is_pass());
        assert!(!validate_parts(0, 2, &[], &[], 0.5).is_pass());
    }

    #[test]
    fn nan_is_rejected() {
        let (mut t, r) = two_state();
        t[0] = f64::NAN;
        assert!(!validate_parts(2, 2, &t, &r, 0.9).is_pass());
    }

    #[test]
    fn repair_renormalizes_only_when_asked() {
        let (mut t, r) = two_state();
        t[0] = 0.45;
        t[1] = 0.45;
        assert!(TabularMdp::new(2, 2, t.clone(), r.clone(), 0.9).is_err());
        let mdp = TabularMdp::with_renormalized_rows(2, 2, t, r, 0.9).unwrap();
        assert_eq!(mdp.kernel_row(0, 0), &[0.5, 0.5]);
    }

    #[test]
    fn document_round_trip() {
        let (t, r) = two_state();
        let mdp = TabularMdp::new(2, 2, t, r, 0.9).unwrap();
        let json = serde_json::to_string(&mdp).unwrap();
        let back: TabularMdp = serde_json::from_str(&json).unwrap();
        assert_eq!(mdp, back);
        assert_eq!(back.kernel_row(1, 1), &[0.2, 0.8]);
        assert_eq!(back.reward(1, 0), 0.3);
    }

    #[test]
    fn policy_checks() {
        assert!(PolicyTable::Deterministic(vec![0, 1]).check(2).is_ok());
        assert!(PolicyTable::Deterministic(vec![0, 2]).check(2).is_err());
        assert!(PolicyTable::Stochastic(vec![vec![0.5, 0.5]]).check(2).is_ok());
        assert!(PolicyTable::Stochastic(vec![vec![0.5, 0.4]]).check(2).is_err());
    }
}
