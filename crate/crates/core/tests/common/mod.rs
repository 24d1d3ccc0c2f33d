//! Independent reference implementations shared by the integration tests.
//! None of these call into the solver code they check.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use predmdp::mdp::TabularMdp;
use predmdp::prediction::PredictionBatch;

/// States T=0, H=1; actions safe=0, bet=1. In T, safe pays 0.5 and stays,
/// bet pays 0 and flips a fair coin. H pays 1 under either action; safe
/// stays, bet flips.
pub fn coin_flip(gamma: f64) -> TabularMdp {
    TabularMdp::new(
        2,
        2,
        vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.5, 0.5],
        vec![0.5, 0.0, 1.0, 1.0],
        gamma,
    )
    .unwrap()
}

/// Hand-derived coin-flip values at γ = 0.9.
pub mod coin {
    /// `V_MDP(T)`: bet forever from T, `v = 0.45 v + 4.5`.
    pub const V_MDP_T: f64 = 90.0 / 11.0;
    pub const V_MDP_H: f64 = 10.0;
    /// With the next flip revealed: bet on heads, safe on tails,
    /// `v = ½·9 + ½(0.5 + 0.9 v)`.
    pub const V_BAYES_K1_T: f64 = 95.0 / 11.0;
    /// Knowing every future flip: wait (0.5 per step) until the first
    /// heads, then bet. `E[γ^N] = ½ / (1 - ½γ) = 10/11` for the first-heads
    /// index `N`, so `V_off(T) = 5(1 - 10/11) + 9 · 10/11 = 95/11`.
    pub const V_OFF_T: f64 = 95.0 / 11.0;
    pub const GAP_T: f64 = V_OFF_T - V_MDP_T;
}

/// Exact value of a deterministic stationary policy: `(I - γ P_π)⁻¹ r_π`.
pub fn policy_value(mdp: &TabularMdp, policy: &[usize]) -> Vec<f64> {
    let n = mdp.num_states();
    let g = mdp.discount();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = policy[s];
        r[s] = mdp.reward(s, a);
        for (t, p) in mdp.kernel_row(s, a).iter().enumerate() {
            m[(s, t)] -= g * p;
        }
    }
    m.lu().solve(&r).expect("I - γP is invertible").iter().copied().collect()
}

/// Optimal values by enumerating every deterministic policy.
pub fn brute_force_optimum(mdp: &TabularMdp) -> Vec<f64> {
    let n = mdp.num_states();
    let na = mdp.num_actions();
    let total = na.pow(n as u32);
    let mut best = vec![f64::NEG_INFINITY; n];
    for code in 0..total {
        let mut c = code;
        let policy: Vec<usize> = (0..n)
            .map(|_| {
                let a = c % na;
                c /= na;
                a
            })
            .collect();
        for (b, v) in best.iter_mut().zip(policy_value(mdp, &policy)) {
            *b = b.max(v);
        }
    }
    best
}

/// Conditioned row: prediction row for predicted actions, kernel otherwise.
fn row(mdp: &TabularMdp, batch: &PredictionBatch, k: usize, s: usize, a: usize) -> Vec<f64> {
    match batch.step(k).row(s, a) {
        Some(r) => r.to_vec(),
        None => mdp.kernel_row(s, a).to_vec(),
    }
}

/// Best K-step open-loop return by recursion over every action sequence,
/// carrying the full state distribution.
pub fn brute_force_plan(mdp: &TabularMdp, batch: &PredictionBatch, s0: usize, terminal: &[f64]) -> f64 {
    fn go(mdp: &TabularMdp, batch: &PredictionBatch, dist: &[f64], t: usize, terminal: &[f64]) -> f64 {
        let n = mdp.num_states();
        let g = mdp.discount();
        if t == batch.horizon() {
            return dist.iter().zip(terminal).map(|(p, v)| p * v).sum();
        }
        (0..mdp.num_actions())
            .map(|a| {
                let mut reward = 0.0;
                let mut next = vec![0.0; n];
                for s in 0..n {
                    if dist[s] == 0.0 {
                        continue;
                    }
                    reward += dist[s] * mdp.reward(s, a);
                    for (x, p) in next.iter_mut().zip(row(mdp, batch, t + 1, s, a)) {
                        *x += dist[s] * p;
                    }
                }
                reward + g * go(mdp, batch, &next, t + 1, terminal)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
    let mut start = vec![0.0; mdp.num_states()];
    start[s0] = 1.0;
    go(mdp, batch, &start, 0, terminal)
}

/// Distance in units in the last place between two finite doubles of the
/// same sign.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    assert!(a.is_finite() && b.is_finite() && a.signum() == b.signum());
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
