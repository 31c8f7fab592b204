//! Distillation regimes (ER, E2R and their adaptive variants) and the
//! actor-critic training loop that runs them.
//!
//! Every regime shapes the reward with a bonus derived from the prior's
//! log-probabilities. E2R-style regimes index the bonus one step ahead and add
//! a cross-entropy regulariser to the policy loss; adaptive regimes scale both
//! by a learned per-state weight `ω(s) = sigmoid(ψ(s))`, trained to explain
//! the bonus-free TD error of the critic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agents::{
    critic_step, policy_gradient_step, td1_advantages_into, ActionValues, Critic, CrossEntropyTerm, SoftmaxPolicy, Transition,
};
use crate::env::{Action, StateId, TabularEnv};
use crate::priors::ActionPrior;
use crate::rng::{self, Rng, Stream};
use crate::table::ParamTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegimeKind {
    Baseline,
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "E2R")]
    E2r,
    #[serde(rename = "AER")]
    Aer,
    #[serde(rename = "AE2R")]
    Ae2r,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 5] = [
        RegimeKind::Baseline,
        RegimeKind::Er,
        RegimeKind::E2r,
        RegimeKind::Aer,
        RegimeKind::Ae2r,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Baseline => "Baseline",
            RegimeKind::Er => "ER",
            RegimeKind::E2r => "E2R",
            RegimeKind::Aer => "AER",
            RegimeKind::Ae2r => "AE2R",
        }
    }

    pub fn uses_prior(self) -> bool {
        self != RegimeKind::Baseline
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, RegimeKind::Aer | RegimeKind::Ae2r)
    }

    /// Bonus indexed by the successor step, paired with a cross-entropy loss.
    pub fn looks_ahead(self) -> bool {
        matches!(self, RegimeKind::E2r | RegimeKind::Ae2r)
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegimeKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown regime '{s}' (expected Baseline, ER, E2R, AER or AE2R)"))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-state prior weights, logistic in zero-initialised logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights {
    pub logits: ParamTable,
}

impl PriorWeights {
    pub fn new(n_states: usize) -> Self {
        PriorWeights {
            logits: ParamTable::zeros(n_states, 1),
        }
    }

    #[inline]
    pub fn omega(&self, s: StateId) -> f64 {
        sigmoid(self.logits.scalar(s))
    }
}

/// What the prior said about one visited step: the state, the action the
/// student took there, and the prior's log-probability of that action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorStep {
    pub state: StateId,
    pub action: usize,
    pub log_prior: f64,
}

/// Reward bonus for step `t`. `next` is the successor step, absent on the
/// final transition (where look-ahead bonuses are zero).
pub fn bonus(kind: RegimeKind, weights: Option<&PriorWeights>, current: &PriorStep, next: Option<&PriorStep>) -> f64 {
    let w = |s: StateId| weights.map_or(1.0, |w| w.omega(s));
    match kind {
        RegimeKind::Baseline => 0.0,
        RegimeKind::Er => current.log_prior,
        RegimeKind::Aer => w(current.state) * current.log_prior,
        RegimeKind::E2r => next.map_or(0.0, |n| n.log_prior),
        RegimeKind::Ae2r => next.map_or(0.0, |n| w(n.state) * n.log_prior),
    }
}

/// Cross-entropy regulariser at `s` for look-ahead regimes, `None` otherwise.
pub fn aux_term(kind: RegimeKind, weights: Option<&PriorWeights>, s: StateId, log_prior: &ActionValues) -> Option<CrossEntropyTerm> {
    let weight = match kind {
        RegimeKind::E2r => 1.0,
        RegimeKind::Ae2r => weights.map_or(1.0, |w| w.omega(s)),
        _ => return None,
    };
    Some(CrossEntropyTerm {
        weight,
        neg_log_prior: log_prior.map(|l| -l),
    })
}

/// Value of the auxiliary loss `ℓ(π, s)`; zero for regimes without one.
pub fn aux_loss(
    kind: RegimeKind,
    weights: Option<&PriorWeights>,
    policy_probs: &ActionValues,
    s: StateId,
    log_prior: &ActionValues,
) -> f64 {
    aux_term(kind, weights, s, log_prior).map_or(0.0, |t| t.value(policy_probs))
}

/// Bonus-free TD error `V(s) - r - γV(s')`.
pub fn td_error_without_bonus(critic: &Critic, t: &Transition) -> f64 {
    let next = if t.done { 0.0 } else { critic.value(t.next_state) };
    critic.value(t.state) - t.reward - critic.gamma * next
}

/// `(E - sigmoid(ψ) L)²` for one transition.
pub fn weight_loss(psi: f64, td_error: f64, log_prior: f64) -> f64 {
    (td_error - sigmoid(psi) * log_prior).powi(2)
}

/// Derivative of [`weight_loss`] with respect to `ψ`.
pub fn weight_loss_grad(psi: f64, td_error: f64, log_prior: f64) -> f64 {
    let w = sigmoid(psi);
    -2.0 * (td_error - w * log_prior) * log_prior * w * (1.0 - w)
}

/// One pass of weight updates over an episode, critic held fixed. Each
/// transition updates the weight at the state its bonus was indexed by.
pub fn weight_step(
    weights: &mut PriorWeights,
    critic: &Critic,
    kind: RegimeKind,
    trajectory: &[Transition],
    prior_steps: &[PriorStep],
    learning_rate: f64,
) {
    debug_assert_eq!(trajectory.len(), prior_steps.len());
    for (i, t) in trajectory.iter().enumerate() {
        let indexed = match kind {
            RegimeKind::Aer => Some(&prior_steps[i]),
            RegimeKind::Ae2r => prior_steps.get(i + 1),
            _ => None,
        };
        let Some(step) = indexed else { continue };
        let e = td_error_without_bonus(critic, t);
        let psi = weights.logits.scalar_mut(step.state);
        *psi -= learning_rate * weight_loss_grad(*psi, e, step.log_prior);
    }
}

/// What one update step of the training budget counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateUnit {
    /// One sampled episode.
    Episode,
    /// One environment transition; learning still happens once per episode.
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    /// Training budget, counted in `update_unit`.
    pub updates: usize,
    pub update_unit: UpdateUnit,
    pub eval_every: usize,
    /// Greedy episodes averaged per evaluation point.
    pub eval_episodes: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    /// Defaults to `critic_lr` when unset.
    pub weight_lr: Option<f64>,
    pub discount: f64,
    pub temperature: f64,
    pub max_episode_steps: usize,
    /// Added to every prior log-probability before it becomes a bonus.
    pub bonus_shift: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            updates: 30_000,
            update_unit: UpdateUnit::Episode,
            eval_every: 300,
            eval_episodes: 1,
            policy_lr: 0.05,
            critic_lr: 0.1,
            weight_lr: None,
            discount: 0.99,
            temperature: 1.0,
            max_episode_steps: 1000,
            bonus_shift: 0.0,
        }
    }
}

impl StudentConfig {
    pub fn weight_lr(&self) -> f64 {
        self.weight_lr.unwrap_or(self.critic_lr)
    }

    pub fn n_evals(&self) -> usize {
        self.updates / self.eval_every
    }
}

/// Prior weights seen on one evaluation, split by degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    /// NaN when no degraded state was visited.
    pub mean_degraded: f64,
    pub mean_nondegraded: f64,
    pub n_degraded: u32,
    pub n_nondegraded: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub update_step: usize,
    pub eval_return: f64,
    pub weights: Option<WeightStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub regime: RegimeKind,
    pub evals: Vec<EvalPoint>,
    pub env_steps: u64,
    pub truncated_episodes: u64,
}

impl RunRecord {
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.evals.iter().map(|e| (e.update_step as f64, e.eval_return)).collect()
    }
}

/// Learner state for one run: policy, critic and (for adaptive regimes) weights.
#[derive(Debug, Clone)]
pub struct Student {
    pub policy: SoftmaxPolicy,
    pub critic: Critic,
    pub weights: Option<PriorWeights>,
}

/// Scratch buffers reused across episodes.
#[derive(Default)]
struct Buffers {
    transitions: Vec<Transition>,
    prior_rows: Vec<ActionValues>,
    prior_steps: Vec<PriorStep>,
    advantages: Vec<f64>,
    aux: Vec<CrossEntropyTerm>,
}

struct Streams {
    dynamics: Rng,
    learning: Rng,
    prior: Rng,
    eval: Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            dynamics: rng::stream(seed, Stream::Dynamics),
            learning: rng::stream(seed, Stream::Learning),
            prior: rng::stream(seed, Stream::Prior),
            eval: rng::stream(seed, Stream::Evaluation),
        }
    }
}

/// Trains a student under `kind` for `cfg.updates` update steps, evaluating
/// the greedy policy every `cfg.eval_every` of them.
///
/// Each update: sample an episode with the current policy, query the prior
/// once per visited state, form bonuses, then step the policy, the critic and
/// finally the prior weights.
pub fn run_training(
    env: &TabularEnv,
    kind: RegimeKind,
    prior: Option<&ActionPrior>,
    cfg: &StudentConfig,
    seed: u64,
) -> RunRecord {
    train_student(env, kind, prior, cfg, seed).0
}

/// [`run_training`] that also hands back the final learner.
pub fn train_student(
    env: &TabularEnv,
    kind: RegimeKind,
    prior: Option<&ActionPrior>,
    cfg: &StudentConfig,
    seed: u64,
) -> (RunRecord, Student) {
    let prior = if kind.uses_prior() {
        Some(prior.expect("regime needs a prior"))
    } else {
        None
    };
    let n = env.n_states();
    let mut student = Student {
        policy: SoftmaxPolicy::new(n, cfg.temperature),
        critic: Critic::new(n, cfg.discount),
        weights: kind.is_adaptive().then(|| PriorWeights::new(n)),
    };
    let mut streams = Streams::new(seed);
    let mut buf = Buffers::default();
    let mut record = RunRecord {
        seed,
        regime: kind,
        evals: Vec::with_capacity(cfg.n_evals()),
        env_steps: 0,
        truncated_episodes: 0,
    };
    let mut visit_stamp = vec![0u32; n];
    let mut stamp = 0u32;

    let n_evals = cfg.n_evals();
    let mut episodes = 0usize;
    while record.evals.len() < n_evals {
        let truncated = sample_episode(env, &student, prior, cfg, &mut streams, &mut buf);
        episodes += 1;
        record.env_steps += buf.transitions.len() as u64;
        record.truncated_episodes += u64::from(truncated);
        learn_from_episode(kind, &mut student, cfg, &mut buf);

        let progress = match cfg.update_unit {
            UpdateUnit::Episode => episodes,
            UpdateUnit::Transition => record.env_steps as usize,
        };
        // a long episode can cross several evaluation points
        while record.evals.len() < n_evals && (record.evals.len() + 1) * cfg.eval_every <= progress {
            let update = (record.evals.len() + 1) * cfg.eval_every;
            let mut total = 0.0;
            let mut stats = WeightAccumulator::default();
            for _ in 0..cfg.eval_episodes.max(1) {
                stamp += 1;
                total += evaluate_episode(env, &student, prior, cfg, &mut streams.eval, &mut |s| {
                    if visit_stamp[s.index()] != stamp {
                        visit_stamp[s.index()] = stamp;
                        if let (Some(w), Some(p)) = (&student.weights, prior) {
                            stats.add(w.omega(s), p.is_degraded(s));
                        }
                    }
                });
            }
            record.evals.push(EvalPoint {
                update_step: update,
                eval_return: total / cfg.eval_episodes.max(1) as f64,
                weights: student.weights.as_ref().map(|_| stats.finish()),
            });
        }
    }
    (record, student)
}

#[derive(Default)]
struct WeightAccumulator {
    sum_deg: f64,
    sum_non: f64,
    n_deg: u32,
    n_non: u32,
}

impl WeightAccumulator {
    fn add(&mut self, omega: f64, degraded: bool) {
        if degraded {
            self.sum_deg += omega;
            self.n_deg += 1;
        } else {
            self.sum_non += omega;
            self.n_non += 1;
        }
    }

    fn finish(&self) -> WeightStats {
        let mean = |s: f64, n: u32| if n == 0 { f64::NAN } else { s / f64::from(n) };
        WeightStats {
            mean_degraded: mean(self.sum_deg, self.n_deg),
            mean_nondegraded: mean(self.sum_non, self.n_non),
            n_degraded: self.n_deg,
            n_nondegraded: self.n_non,
        }
    }
}

/// Rolls out one episode into `buf`; returns whether the step cap cut it.
fn sample_episode(
    env: &TabularEnv,
    student: &Student,
    prior: Option<&ActionPrior>,
    cfg: &StudentConfig,
    streams: &mut Streams,
    buf: &mut Buffers,
) -> bool {
    buf.transitions.clear();
    buf.prior_rows.clear();
    let mut pos = env.start();
    for _ in 0..cfg.max_episode_steps {
        let s = env.state(pos);
        let a = student.policy.sample(s, &mut streams.learning);
        if let Some(p) = prior {
            buf.prior_rows.push(*p.log_probs(s, &mut streams.prior));
        }
        let out = env.step(pos, Action::from_index(a), &mut streams.dynamics);
        buf.transitions.push(Transition {
            state: s,
            action: a,
            reward: out.reward,
            next_state: env.state(out.next_position),
            done: out.done,
            bonus: 0.0,
        });
        if out.done {
            return false;
        }
        pos = out.next_position;
    }
    true
}

fn learn_from_episode(kind: RegimeKind, student: &mut Student, cfg: &StudentConfig, buf: &mut Buffers) {
    let len = buf.transitions.len();
    buf.prior_steps.clear();
    if kind.uses_prior() {
        buf.prior_steps.extend(buf.transitions.iter().zip(&buf.prior_rows).map(|(t, row)| PriorStep {
            state: t.state,
            action: t.action,
            log_prior: row[t.action] + cfg.bonus_shift,
        }));
        for i in 0..len {
            let b = bonus(kind, student.weights.as_ref(), &buf.prior_steps[i], buf.prior_steps.get(i + 1));
            buf.transitions[i].bonus = b;
        }
    }

    buf.advantages.resize(len, 0.0);
    td1_advantages_into(&buf.transitions, &student.critic, &mut buf.advantages);

    let aux = if kind.looks_ahead() {
        buf.aux.clear();
        let weights = student.weights.as_ref();
        buf.aux.extend(
            buf.transitions
                .iter()
                .zip(&buf.prior_rows)
                .map(|(t, row)| aux_term(kind, weights, t.state, row).expect("look-ahead regime")),
        );
        Some(buf.aux.as_slice())
    } else {
        None
    };
    policy_gradient_step(&mut student.policy, &buf.transitions, &buf.advantages, aux, cfg.policy_lr);
    critic_step(&mut student.critic, &buf.transitions, cfg.critic_lr);
    if let Some(weights) = student.weights.as_mut() {
        weight_step(weights, &student.critic, kind, &buf.transitions, &buf.prior_steps, cfg.weight_lr());
    }
}

/// One greedy episode; returns the undiscounted environment return.
fn evaluate_episode(
    env: &TabularEnv,
    student: &Student,
    _prior: Option<&ActionPrior>,
    cfg: &StudentConfig,
    rng: &mut Rng,
    on_visit: &mut dyn FnMut(StateId),
) -> f64 {
    let mut pos = env.start();
    let mut ret = 0.0;
    for _ in 0..cfg.max_episode_steps {
        let s = env.state(pos);
        on_visit(s);
        let out = env.step(pos, Action::from_index(student.policy.greedy(s)), rng);
        ret += out.reward;
        if out.done {
            break;
        }
        pos = out.next_position;
    }
    ret
}
