//! Tabular learners: the Q-learning expert and the softmax actor-critic student.

mod qlearning;

pub use qlearning::{train_q_learning, ExpertTable, QLearningConfig};

use rand::Rng as _;

use crate::env::{StateId, N_ACTIONS};
use crate::rng::Rng;
use crate::table::ParamTable;

pub type ActionValues = [f64; N_ACTIONS];

/// Boltzmann distribution over `q / temperature`, max-subtracted.
pub fn boltzmann(q: &ActionValues, temperature: f64) -> ActionValues {
    assert!(temperature > 0.0, "temperature must be positive");
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = q.map(|v| ((v - max) / temperature).exp());
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// Log of [`boltzmann`], computed without forming the probabilities.
pub fn log_boltzmann(q: &ActionValues, temperature: f64) -> ActionValues {
    assert!(temperature > 0.0, "temperature must be positive");
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = q.iter().map(|v| ((v - max) / temperature).exp()).sum::<f64>().ln();
    q.map(|v| (v - max) / temperature - lse)
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub(crate) fn as_action_values(row: &[f64]) -> ActionValues {
    row.try_into().expect("row of width 4")
}

/// Tabular softmax policy with zero-initialised logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub logits: ParamTable,
    pub temperature: f64,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, temperature: f64) -> Self {
        assert!(temperature > 0.0);
        SoftmaxPolicy {
            logits: ParamTable::zeros(n_states, N_ACTIONS),
            temperature,
        }
    }

    pub fn logits(&self, s: StateId) -> ActionValues {
        as_action_values(self.logits.row(s))
    }

    pub fn probs(&self, s: StateId) -> ActionValues {
        boltzmann(&self.logits(s), self.temperature)
    }

    pub fn sample(&self, s: StateId, rng: &mut Rng) -> usize {
        sample_index(&self.probs(s), rng)
    }

    pub fn greedy(&self, s: StateId) -> usize {
        greedy_action(self.logits.row(s))
    }
}

/// Tabular state-value critic.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub values: ParamTable,
    pub gamma: f64,
}

impl Critic {
    pub fn new(n_states: usize, gamma: f64) -> Self {
        Critic {
            values: ParamTable::zeros(n_states, 1),
            gamma,
        }
    }

    #[inline]
    pub fn value(&self, s: StateId) -> f64 {
        self.values.scalar(s)
    }

    /// Bootstrapped target `r + B + γ V(s')`, with terminal successors worth zero.
    #[inline]
    pub fn td_target(&self, t: &Transition) -> f64 {
        let next = if t.done { 0.0 } else { self.value(t.next_state) };
        t.reward + t.bonus + self.gamma * next
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateId,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateId,
    pub done: bool,
    /// Shaping bonus attached to this step (zero without a prior).
    pub bonus: f64,
}

/// One sampled episode. Only the last element may carry `done`; an episode cut
/// by the step cap ends without it.
pub type Trajectory = Vec<Transition>;

/// Monte-Carlo advantages `G_t - V(s_t)`, with `G_t` the discounted sum of
/// reward plus bonus from `t` to the end of the episode.
pub fn td1_advantages(trajectory: &[Transition], critic: &Critic) -> Vec<f64> {
    let mut out = vec![0.0; trajectory.len()];
    td1_advantages_into(trajectory, critic, &mut out);
    out
}

pub(crate) fn td1_advantages_into(trajectory: &[Transition], critic: &Critic, out: &mut [f64]) {
    let mut ret = 0.0;
    for (t, adv) in trajectory.iter().zip(out.iter_mut()).rev() {
        ret = t.reward + t.bonus + critic.gamma * ret;
        *adv = ret - critic.value(t.state);
    }
}

/// Cross-entropy regulariser `weight * Σ_a π(a|s) (-log π0(a|s))` at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropyTerm {
    pub weight: f64,
    pub neg_log_prior: ActionValues,
}

impl CrossEntropyTerm {
    pub fn value(&self, probs: &ActionValues) -> f64 {
        self.weight * probs.iter().zip(&self.neg_log_prior).map(|(p, c)| p * c).sum::<f64>()
    }
}

/// Per-step policy surrogate `-Â log π(a|s) + ℓ(π, s)`; its gradient is the
/// update direction applied by [`policy_gradient_step`].
pub fn surrogate_loss(
    logits: &ActionValues,
    temperature: f64,
    action: usize,
    advantage: f64,
    aux: Option<&CrossEntropyTerm>,
) -> f64 {
    let logp = log_boltzmann(logits, temperature);
    let reg = aux.map_or(0.0, |a| a.value(&boltzmann(logits, temperature)));
    -advantage * logp[action] + reg
}

/// Gradient of [`surrogate_loss`] with respect to the logits.
pub fn surrogate_gradient(
    logits: &ActionValues,
    temperature: f64,
    action: usize,
    advantage: f64,
    aux: Option<&CrossEntropyTerm>,
) -> ActionValues {
    let p = boltzmann(logits, temperature);
    let mut g = [0.0; N_ACTIONS];
    for (j, gj) in g.iter_mut().enumerate() {
        let indicator = if j == action { 1.0 } else { 0.0 };
        *gj = -advantage * (indicator - p[j]) / temperature;
    }
    if let Some(aux) = aux {
        let mean: f64 = p.iter().zip(&aux.neg_log_prior).map(|(pi, c)| pi * c).sum();
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += aux.weight * p[j] * (aux.neg_log_prior[j] - mean) / temperature;
        }
    }
    g
}

/// Descends the surrogate once per transition, in episode order.
pub fn policy_gradient_step(
    policy: &mut SoftmaxPolicy,
    trajectory: &[Transition],
    advantages: &[f64],
    aux: Option<&[CrossEntropyTerm]>,
    learning_rate: f64,
) {
    assert_eq!(trajectory.len(), advantages.len());
    if let Some(aux) = aux {
        assert_eq!(aux.len(), trajectory.len());
    }
    let tau = policy.temperature;
    for (i, (t, &adv)) in trajectory.iter().zip(advantages).enumerate() {
        let term = aux.map(|a| &a[i]);
        let g = surrogate_gradient(&policy.logits(t.state), tau, t.action, adv, term);
        for (z, gj) in policy.logits.row_mut(t.state).iter_mut().zip(g) {
            *z -= learning_rate * gj;
        }
    }
}

/// Squared TD error of one transition against a fixed target.
pub fn critic_loss(value: f64, target: f64) -> f64 {
    (value - target).powi(2)
}

/// Derivative of [`critic_loss`] with respect to the value, target held fixed.
pub fn critic_loss_grad(value: f64, target: f64) -> f64 {
    2.0 * (value - target)
}

/// One semi-gradient step per transition on `(V(s) - (r + B + γV(s')))²`.
pub fn critic_step(critic: &mut Critic, trajectory: &[Transition], learning_rate: f64) {
    for t in trajectory {
        let target = critic.td_target(t);
        let v = critic.values.scalar_mut(t.state);
        *v -= learning_rate * critic_loss_grad(*v, target);
    }
}
