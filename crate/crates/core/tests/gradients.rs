mod common;

use common::*;
use priorlab::agents::{
    critic_loss_grad, critic_step, policy_gradient_step, surrogate_gradient, Critic, CrossEntropyTerm, SoftmaxPolicy, Transition,
};
use priorlab::distill::{td_error_without_bonus, weight_loss_grad, weight_step, PriorStep, PriorWeights, RegimeKind};
use priorlab::env::StateId;

fn assert_all_within(errors: &[f64], what: &str) {
    let worst = errors.iter().copied().fold(0.0, f64::max);
    assert_eq!(errors.len(), 100);
    assert!(worst <= FD_TOLERANCE, "{what}: worst relative error {worst:e}");
}

#[test]
fn surrogate_matches_finite_differences() {
    assert_all_within(&surrogate_gradient_errors(100, 11), "surrogate");
}

#[test]
fn critic_loss_matches_finite_differences() {
    assert_all_within(&critic_gradient_errors(100, 12), "critic");
}

#[test]
fn weight_loss_matches_finite_differences() {
    assert_all_within(&weight_gradient_errors(100, 13), "weights");
}

fn step(state: u32, action: usize, reward: f64, next: u32, done: bool, bonus: f64) -> Transition {
    Transition {
        state: StateId(state),
        action,
        reward,
        next_state: StateId(next),
        done,
        bonus,
    }
}

#[test]
fn policy_step_moves_against_the_gradient() {
    let mut policy = SoftmaxPolicy::new(2, 0.8);
    policy.logits.row_mut(StateId(0)).copy_from_slice(&[0.3, -0.2, 1.0, 0.0]);
    let before = policy.logits(StateId(0));
    let aux = CrossEntropyTerm {
        weight: 0.4,
        neg_log_prior: [0.1, 2.0, 3.0, 1.5],
    };
    let t = step(0, 2, 1.0, 1, false, 0.0);
    let lr = 0.01;
    policy_gradient_step(&mut policy, &[t], &[1.7], Some(&[aux]), lr);
    let g = surrogate_gradient(&before, 0.8, 2, 1.7, Some(&aux));
    for j in 0..4 {
        assert!((policy.logits(StateId(0))[j] - (before[j] - lr * g[j])).abs() < 1e-15);
    }
}

#[test]
fn critic_step_moves_against_the_gradient() {
    let mut critic = Critic::new(2, 0.9);
    *critic.values.scalar_mut(StateId(0)) = 1.0;
    *critic.values.scalar_mut(StateId(1)) = 2.0;
    let t = step(0, 0, 0.5, 1, false, -0.3);
    let target = 0.5 - 0.3 + 0.9 * 2.0;
    critic_step(&mut critic, &[t], 0.1);
    assert!((critic.value(StateId(0)) - (1.0 - 0.1 * critic_loss_grad(1.0, target))).abs() < 1e-15);
    assert_eq!(critic.value(StateId(1)), 2.0);
}

#[test]
fn weight_step_moves_against_the_gradient_at_the_indexed_state() {
    let mut critic = Critic::new(3, 0.9);
    *critic.values.scalar_mut(StateId(0)) = -1.0;
    *critic.values.scalar_mut(StateId(1)) = 0.5;
    let traj = [step(0, 1, 0.0, 1, false, 0.0), step(1, 3, 1.0, 2, true, 0.0)];
    let prior = [
        PriorStep {
            state: StateId(0),
            action: 1,
            log_prior: -2.0,
        },
        PriorStep {
            state: StateId(1),
            action: 3,
            log_prior: -0.7,
        },
    ];
    // look-ahead weights at s_{t+1}: only the first transition has a successor
    let mut w = PriorWeights::new(3);
    weight_step(&mut w, &critic, RegimeKind::Ae2r, &traj, &prior, 0.2);
    let e0 = td_error_without_bonus(&critic, &traj[0]);
    assert!((w.logits.scalar(StateId(1)) + 0.2 * weight_loss_grad(0.0, e0, -0.7)).abs() < 1e-15);
    assert_eq!(w.logits.scalar(StateId(0)), 0.0);

    let mut w = PriorWeights::new(3);
    weight_step(&mut w, &critic, RegimeKind::Aer, &traj, &prior, 0.2);
    let e1 = td_error_without_bonus(&critic, &traj[1]);
    assert!((w.logits.scalar(StateId(0)) + 0.2 * weight_loss_grad(0.0, e0, -2.0)).abs() < 1e-15);
    assert!((w.logits.scalar(StateId(1)) + 0.2 * weight_loss_grad(0.0, e1, -0.7)).abs() < 1e-15);
}
