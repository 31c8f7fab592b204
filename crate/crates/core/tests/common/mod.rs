//! Oracles shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng as _, SeedableRng};

use priorlab::agents::{
    critic_loss, critic_loss_grad, greedy_action, log_boltzmann, surrogate_gradient, surrogate_loss, train_q_learning, Critic,
    CrossEntropyTerm, QLearningConfig, Transition,
};
use priorlab::distill::{td_error_without_bonus, weight_loss, weight_loss_grad};
use priorlab::env::{Action, Dynamics, GridWorld, Position, StateId, TabularEnv};
use priorlab::rng::Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Below this max-norm, gradients are compared absolutely: a central
/// difference at step 1e-6 carries roundoff near `|f| * 1e-10`.
pub const GRADIENT_FLOOR: f64 = 1e-3;

/// Max-norm relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(GRADIENT_FLOOR, f64::max);
    diff / scale
}

fn random_q(rng: &mut Rng, spread: f64) -> [f64; 4] {
    std::array::from_fn(|_| rng.gen_range(-spread..spread))
}

/// Policy surrogate (advantage term plus optional cross-entropy) against
/// central differences in each logit.
pub fn surrogate_gradient_errors(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..instances)
        .map(|_| {
            let logits = random_q(&mut rng, 3.0);
            let tau = rng.gen_range(0.3..3.0);
            let action = rng.gen_range(0..4);
            let advantage = rng.gen_range(-10.0..10.0);
            let aux = rng.gen_bool(0.5).then(|| CrossEntropyTerm {
                weight: rng.gen_range(0.0..1.0),
                neg_log_prior: log_boltzmann(&random_q(&mut rng, 5.0), 1.0).map(|l| -l),
            });
            let analytic = surrogate_gradient(&logits, tau, action, advantage, aux.as_ref());
            let numeric: Vec<f64> = (0..4)
                .map(|j| {
                    central_difference(
                        |x| {
                            let mut z = logits;
                            z[j] = x;
                            surrogate_loss(&z, tau, action, advantage, aux.as_ref())
                        },
                        logits[j],
                    )
                })
                .collect();
            relative_error(&analytic, &numeric)
        })
        .collect()
}

fn random_trajectory(rng: &mut Rng, n_states: usize) -> Vec<Transition> {
    let len = rng.gen_range(1..8);
    (0..len)
        .map(|i| Transition {
            state: StateId(rng.gen_range(0..n_states) as u32),
            action: rng.gen_range(0..4),
            reward: rng.gen_range(-10.0..10.0),
            next_state: StateId(rng.gen_range(0..n_states) as u32),
            done: i + 1 == len && rng.gen_bool(0.5),
            bonus: rng.gen_range(-5.0..0.0),
        })
        .collect()
}

fn random_critic(rng: &mut Rng, n_states: usize) -> Critic {
    let mut critic = Critic::new(n_states, rng.gen_range(0.5..1.0));
    for s in 0..n_states {
        *critic.values.scalar_mut(StateId(s as u32)) = rng.gen_range(-5.0..5.0);
    }
    critic
}

/// Critic loss summed over a trajectory, targets frozen at the current
/// parameters, differentiated with respect to every state value.
pub fn critic_gradient_errors(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..instances)
        .map(|_| {
            let n = rng.gen_range(2..7);
            let critic = random_critic(&mut rng, n);
            let traj = random_trajectory(&mut rng, n);
            let targets: Vec<f64> = traj.iter().map(|t| critic.td_target(t)).collect();
            let loss = |values: &[f64]| -> f64 {
                traj.iter().zip(&targets).map(|(t, &y)| critic_loss(values[t.state.index()], y)).sum()
            };
            let values: Vec<f64> = (0..n).map(|s| critic.value(StateId(s as u32))).collect();
            let mut analytic = vec![0.0; n];
            for (t, &y) in traj.iter().zip(&targets) {
                analytic[t.state.index()] += critic_loss_grad(values[t.state.index()], y);
            }
            let numeric: Vec<f64> = (0..n)
                .map(|s| {
                    central_difference(
                        |x| {
                            let mut v = values.clone();
                            v[s] = x;
                            loss(&v)
                        },
                        values[s],
                    )
                })
                .collect();
            relative_error(&analytic, &numeric)
        })
        .collect()
}

/// Prior-weight loss summed over a trajectory, each transition paired with a
/// weight logit and a prior log-probability, against differences in every logit.
pub fn weight_gradient_errors(instances: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..instances)
        .map(|_| {
            let n = rng.gen_range(2..7);
            let critic = random_critic(&mut rng, n);
            let traj = random_trajectory(&mut rng, n);
            let psi: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let terms: Vec<(usize, f64, f64)> = traj
                .iter()
                .map(|t| (rng.gen_range(0..n), td_error_without_bonus(&critic, t), rng.gen_range(-10.0..-0.01)))
                .collect();
            let loss = |psi: &[f64]| -> f64 { terms.iter().map(|&(i, e, l)| weight_loss(psi[i], e, l)).sum() };
            let mut analytic = vec![0.0; n];
            for &(i, e, l) in &terms {
                analytic[i] += weight_loss_grad(psi[i], e, l);
            }
            let numeric: Vec<f64> = (0..n)
                .map(|i| {
                    central_difference(
                        |x| {
                            let mut p = psi.clone();
                            p[i] = x;
                            loss(&p)
                        },
                        psi[i],
                    )
                })
                .collect();
            relative_error(&analytic, &numeric)
        })
        .collect()
}

/// A small deterministic world with walls and one +10 goal.
pub fn random_goal_world(rng: &mut Rng) -> GridWorld {
    loop {
        let h = rng.gen_range(3..=6);
        let w = rng.gen_range(3..=6);
        let mut grid: Vec<Vec<char>> = (0..h).map(|_| (0..w).map(|_| if rng.gen_bool(0.2) { '#' } else { '.' }).collect()).collect();
        let goal = (rng.gen_range(0..h), rng.gen_range(0..w));
        let start = (rng.gen_range(0..h), rng.gen_range(0..w));
        if goal == start {
            continue;
        }
        grid[goal.0][goal.1] = 'F';
        grid[start.0][start.1] = '.';
        let rows: Vec<String> = grid.iter().map(|r| r.iter().collect()).collect();
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        let world = GridWorld::from_layout(
            &rows,
            Position::new(start.0, start.1),
            Dynamics {
                termination_prob: 0.0,
                transition_noise: 0.0,
            },
        )
        .expect("valid layout");
        if optimal_values(&world, 0.99).1[start.0 * w + start.1] > 0.0 {
            return world;
        }
    }
}

/// Value iteration over positions of a deterministic world. Returns the
/// optimal action values and state values, indexed by `row * width + col`.
pub fn optimal_values(world: &GridWorld, gamma: f64) -> (Vec<[f64; 4]>, Vec<f64>) {
    let idx = |p: Position| p.row * world.width() + p.col;
    let n = world.height() * world.width();
    let mut v = vec![0.0; n];
    let mut q = vec![[0.0; 4]; n];
    loop {
        let mut delta: f64 = 0.0;
        for p in world.positions() {
            let cell = world.cell(p);
            if cell.is_wall() || cell.is_terminal() {
                continue;
            }
            for a in Action::ALL {
                let t = world.move_target(p, a);
                let next = world.cell(t);
                let r = if t == p { 0.0 } else { next.reward() };
                q[idx(p)][a.index()] = r + if next.is_terminal() { 0.0 } else { gamma * v[idx(t)] };
            }
            let best = q[idx(p)].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[idx(p)]).abs());
            v[idx(p)] = best;
        }
        if delta < 1e-12 {
            return (q, v);
        }
    }
}

#[derive(Debug, Default)]
pub struct OracleOutcome {
    pub worlds: usize,
    pub states_checked: usize,
    pub mismatches: Vec<String>,
}

/// Trains the expert on small deterministic worlds and compares its greedy
/// action with the value-iteration optimal set at every state visited at
/// least `min_visits` times.
pub fn q_learning_matches_value_iteration(
    n_worlds: usize,
    budget: u64,
    cfg: &QLearningConfig,
    min_visits: u32,
    seed: u64,
) -> OracleOutcome {
    let mut rng = seeded(seed);
    let mut out = OracleOutcome::default();
    for w in 0..n_worlds {
        let world = random_goal_world(&mut rng);
        let (q_star, _) = optimal_values(&world, cfg.discount);
        let positions: Vec<Position> = world
            .positions()
            .filter(|&p| !world.cell(p).is_wall() && !world.cell(p).is_terminal())
            .collect();
        let env = TabularEnv::new(world);
        let distinct: BTreeSet<StateId> = positions.iter().map(|&p| env.state(p)).collect();
        assert_eq!(distinct.len(), positions.len(), "small worlds must not alias observations");
        let expert = train_q_learning(&env, budget, cfg, &mut seeded(seed ^ (w as u64 + 1)));
        out.worlds += 1;
        for &p in &positions {
            let s = env.state(p);
            if expert.visits[s.index()] < min_visits {
                continue;
            }
            out.states_checked += 1;
            let qs = q_star[p.row * env.world.width() + p.col];
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let learned = greedy_action(expert.q.row(s));
            if qs[learned] < best - 1e-10 {
                out.mismatches.push(format!(
                    "world {w} at {p:?} ({} visits): learned {learned} from {:?}, optimal {qs:?}",
                    expert.visits[s.index()],
                    expert.q.row(s)
                ));
            }
        }
    }
    out
}
