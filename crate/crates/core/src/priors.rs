//! Soft action priors built from expert Q-tables, and their degradations.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agents::{as_action_values, boltzmann, log_boltzmann, ActionValues, ExpertTable};
use crate::env::StateId;
use crate::rng::Rng;
use crate::table::ParamTable;

/// Consecutive duplicate draws tolerated before the remaining states are
/// drawn from the renormalised distribution directly (same law, bounded time).
const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PriorError {
    #[error("requested {requested} degraded states but only {available} are available")]
    NotEnoughStates { requested: usize, available: usize },
    #[error("noise probability {0} is outside [0, 1]")]
    BadNoise(f64),
    #[error("degradation needs an expert and an adversarial prior")]
    WrongBase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorMode {
    Expert,
    Adversarial,
    RandomDegraded { noise_p: f64 },
    StructuralDegraded { states: BTreeSet<StateId> },
}

/// Which degradation a prior setting applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DegradationSpec {
    None,
    Random {
        noise_p: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Structural {
        n_states: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<(), PriorError> {
        match *self {
            DegradationSpec::Random { noise_p, .. } if !(0.0..=1.0).contains(&noise_p) => Err(PriorError::BadNoise(noise_p)),
            _ => Ok(()),
        }
    }
}

/// How an expert's Q-row is reduced to a state value for degraded-state selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateValue {
    #[default]
    Max,
    /// Expectation of Q under the expert's Boltzmann policy.
    Softmax,
}

/// A map from states to action distributions, stored as log-probabilities.
#[derive(Debug, Clone)]
pub struct ActionPrior {
    mode: PriorMode,
    temperature: f64,
    base: Arc<[ActionValues]>,
    swap: Option<Arc<[ActionValues]>>,
    degraded: Vec<bool>,
}

fn log_prob_rows(q: &ParamTable, temperature: f64, negate: bool) -> Arc<[ActionValues]> {
    q.iter()
        .map(|(_, row)| {
            let mut values = as_action_values(row);
            if negate {
                values = values.map(|v| -v);
            }
            log_boltzmann(&values, temperature)
        })
        .collect()
}

/// Boltzmann policy over the expert's Q-values.
pub fn expert_prior(q: &ParamTable, temperature: f64) -> ActionPrior {
    ActionPrior {
        mode: PriorMode::Expert,
        temperature,
        base: log_prob_rows(q, temperature, false),
        swap: None,
        degraded: Vec::new(),
    }
}

/// Boltzmann policy over the negated expert Q-values.
pub fn adversarial_policy(q: &ParamTable, temperature: f64) -> ActionPrior {
    ActionPrior {
        mode: PriorMode::Adversarial,
        temperature,
        base: log_prob_rows(q, temperature, true),
        swap: None,
        degraded: Vec::new(),
    }
}

fn check_bases(expert: &ActionPrior, adversarial: &ActionPrior) -> Result<(), PriorError> {
    if expert.mode != PriorMode::Expert || adversarial.mode != PriorMode::Adversarial {
        return Err(PriorError::WrongBase);
    }
    Ok(())
}

/// Answers each query with the adversarial distribution with probability
/// `noise_p`, the expert otherwise.
pub fn random_degrade(expert: &ActionPrior, adversarial: &ActionPrior, noise_p: f64) -> Result<ActionPrior, PriorError> {
    check_bases(expert, adversarial)?;
    if !(0.0..=1.0).contains(&noise_p) {
        return Err(PriorError::BadNoise(noise_p));
    }
    Ok(ActionPrior {
        mode: PriorMode::RandomDegraded { noise_p },
        temperature: expert.temperature,
        base: expert.base.clone(),
        swap: Some(adversarial.base.clone()),
        degraded: Vec::new(),
    })
}

/// Replaces the expert by the adversary on a fixed set of states.
pub fn structural_degrade(
    expert: &ActionPrior,
    adversarial: &ActionPrior,
    states: &BTreeSet<StateId>,
) -> Result<ActionPrior, PriorError> {
    check_bases(expert, adversarial)?;
    let mut degraded = vec![false; expert.base.len()];
    for s in states {
        degraded[s.index()] = true;
    }
    Ok(ActionPrior {
        mode: PriorMode::StructuralDegraded { states: states.clone() },
        temperature: expert.temperature,
        base: expert.base.clone(),
        swap: Some(adversarial.base.clone()),
        degraded,
    })
}

impl ActionPrior {
    pub fn mode(&self) -> &PriorMode {
        &self.mode
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn n_states(&self) -> usize {
        self.base.len()
    }

    /// Log-probabilities at `s`. Randomly degraded priors consume one uniform
    /// draw per call; every other mode ignores `rng`.
    #[inline]
    pub fn log_probs(&self, s: StateId, rng: &mut Rng) -> &ActionValues {
        let i = s.index();
        match (&self.mode, &self.swap) {
            (PriorMode::RandomDegraded { noise_p }, Some(swap)) => {
                if rng.gen::<f64>() < *noise_p {
                    &swap[i]
                } else {
                    &self.base[i]
                }
            }
            (PriorMode::StructuralDegraded { .. }, Some(swap)) if self.degraded[i] => &swap[i],
            _ => &self.base[i],
        }
    }

    pub fn probs(&self, s: StateId, rng: &mut Rng) -> ActionValues {
        self.log_probs(s, rng).map(f64::exp)
    }

    /// Whether `s` belongs to the structurally degraded set.
    pub fn is_degraded(&self, s: StateId) -> bool {
        self.degraded.get(s.index()).copied().unwrap_or(false)
    }

    pub fn degraded_states(&self) -> Option<&BTreeSet<StateId>> {
        match &self.mode {
            PriorMode::StructuralDegraded { states } => Some(states),
            _ => None,
        }
    }
}

/// Expert state values over the states the expert actually acted in.
pub fn expert_state_values(expert: &ExpertTable, reduction: StateValue, temperature: f64) -> Vec<(StateId, f64)> {
    expert
        .q
        .iter()
        .filter(|(s, _)| expert.visits[s.index()] > 0)
        .map(|(s, row)| {
            let q = as_action_values(row);
            let v = match reduction {
                StateValue::Max => q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                StateValue::Softmax => boltzmann(&q, temperature).iter().zip(&q).map(|(p, v)| p * v).sum(),
            };
            (s, v)
        })
        .collect()
}

/// Softmax of `values / temperature`, max-subtracted.
pub fn state_distribution(values: &[(StateId, f64)], temperature: f64) -> Vec<f64> {
    let max = values.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = values.iter().map(|&(_, v)| ((v - max) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

fn draw(p: &[f64], total: f64, rng: &mut Rng) -> usize {
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding gap: last state with positive mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Draws states from the softmax of their values, rejecting repeats, until
/// `n_states` distinct states are collected.
pub fn select_degraded_states(
    values: &[(StateId, f64)],
    n_states: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<BTreeSet<StateId>, PriorError> {
    if n_states > values.len() {
        return Err(PriorError::NotEnoughStates {
            requested: n_states,
            available: values.len(),
        });
    }
    let mut p = state_distribution(values, temperature);
    let mut chosen = BTreeSet::new();
    let mut rejections = 0;
    while chosen.len() < n_states {
        if rejections < MAX_CONSECUTIVE_REJECTIONS {
            let i = draw(&p, 1.0, rng);
            if chosen.insert(values[i].0) {
                rejections = 0;
            } else {
                rejections += 1;
            }
        } else {
            for (i, (s, _)) in values.iter().enumerate() {
                if chosen.contains(s) {
                    p[i] = 0.0;
                }
            }
            let total: f64 = p.iter().sum();
            let i = if total > 0.0 {
                draw(&p, total, rng)
            } else {
                // all remaining mass underflowed: take the next state in order
                values.iter().position(|(s, _)| !chosen.contains(s)).expect("unchosen state")
            };
            chosen.insert(values[i].0);
            p[i] = 0.0;
        }
    }
    Ok(chosen)
}
