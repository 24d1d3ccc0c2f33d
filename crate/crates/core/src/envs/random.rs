//! Random synthetic MDPs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::rng::{sample_dirichlet, seeded};

/// How rewards of a random MDP are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardLaw {
    /// i.i.d. `U[0,1]`.
    #[default]
    Uniform,
    Constant {
        value: f64,
    },
}

/// Transition rows uniform on the simplex, rewards per `law`.
pub fn build_random_mdp(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    law: RewardLaw,
    seed: u64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::invalid("num_states", "sizes must be at least 1"));
    }
    if let RewardLaw::Constant { value } = law {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid("reward_law.value", "must lie in [0,1]"));
        }
    }
    let mut rng = seeded(seed);
    let ones = vec![1.0; num_states];
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(sample_dirichlet(&ones, &mut rng));
    }
    let reward = (0..num_states * num_actions)
        .map(|_| match law {
            RewardLaw::Uniform => rng.random::<f64>(),
            RewardLaw::Constant { value } => value,
        })
        .collect();
    TabularMdp::with_renormalized_rows(num_states, num_actions, transition, reward, discount)
}
