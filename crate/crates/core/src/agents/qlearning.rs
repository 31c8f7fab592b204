use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, TabularEnv, N_ACTIONS};
use crate::rng::Rng;
use crate::table::ParamTable;

use super::greedy_action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningConfig {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub discount: f64,
    pub max_episode_steps: usize,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            learning_rate: 0.1,
            epsilon: 0.1,
            discount: 0.99,
            max_episode_steps: 1000,
        }
    }
}

/// Argmax with ties broken uniformly at random, so an untrained table
/// explores instead of repeating the lowest-index action.
fn greedy_action_random_tie(row: &[f64], rng: &mut Rng) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_best = row.iter().filter(|&&v| v == best).count();
    if n_best == 1 {
        return greedy_action(row);
    }
    let pick = rng.gen_range(0..n_best);
    row.iter().enumerate().filter(|&(_, &v)| v == best).nth(pick).map(|(i, _)| i).expect("a maximum")
}

/// A trained Q-table together with how often each state was acted in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTable {
    pub q: ParamTable,
    pub visits: Vec<u32>,
    pub transitions: u64,
}

/// ε-greedy one-step Q-learning for exactly `budget` environment transitions,
/// restarting from the initial state whenever an episode ends.
pub fn train_q_learning(env: &TabularEnv, budget: u64, cfg: &QLearningConfig, rng: &mut Rng) -> ExpertTable {
    let n = env.n_states();
    let mut q = ParamTable::zeros(n, N_ACTIONS);
    let mut visits = vec![0u32; n];
    let mut transitions = 0u64;
    let mut pos = env.start();
    let mut steps_in_episode = 0usize;
    while transitions < budget {
        let s = env.state(pos);
        let a = if rng.gen::<f64>() < cfg.epsilon {
            rng.gen_range(0..N_ACTIONS)
        } else {
            greedy_action_random_tie(q.row(s), rng)
        };
        let out = env.step(pos, Action::from_index(a), rng);
        transitions += 1;
        steps_in_episode += 1;
        visits[s.index()] += 1;

        let bootstrap = if out.done {
            0.0
        } else {
            let next = q.row(env.state(out.next_position));
            next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let target = out.reward + cfg.discount * bootstrap;
        let qa = &mut q.row_mut(s)[a];
        *qa += cfg.learning_rate * (target - *qa);

        if out.done || steps_in_episode >= cfg.max_episode_steps {
            pos = env.start();
            steps_in_episode = 0;
        } else {
            pos = out.next_position;
        }
    }
    ExpertTable { q, visits, transitions }
}
