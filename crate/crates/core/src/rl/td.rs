//! Discounted returns, temporal-difference learning and actor-critic
//! training.
//!
//! A transition's quality obeys Q̃(t) = s_t + γ Q̃(t+1); the TD target
//! bootstraps that recursion with a periodically refreshed frozen copy
//! of the Q table.

use super::env::{Episode, ToyEnv};
use super::pg::{advantage, grad_scale, ActorCritic};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngStream;

/// s_t + Σ_{t' > t} γ^(t'-t) s_t', with `t` indexing actions from zero.
pub fn discounted_return(rewards: &[f64], gamma: f64, t: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArg(format!("discount {gamma}")));
    }
    if t >= rewards.len() {
        return Err(Error::InvalidArg(format!("t = {t} beyond episode of {}", rewards.len())));
    }
    let mut acc = 0.0;
    for (offset, &r) in rewards[t..].iter().enumerate() {
        acc += gamma.powi(offset as i32) * r;
    }
    Ok(acc)
}

/// Q learner with a frozen target copy refreshed every `refresh_every`
/// updates.
#[derive(Debug, Clone)]
pub struct TdLearner {
    pub q: Vec<Vec<f64>>,
    frozen: Vec<Vec<f64>>,
    pub gamma: f64,
    pub step: f64,
    pub refresh_every: usize,
    updates: usize,
}

impl TdLearner {
    pub fn new(states: usize, actions: usize, gamma: f64, step: f64) -> Result<TdLearner> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArg(format!("td learner: gamma {gamma} outside [0, 1)")));
        }
        Ok(TdLearner {
            q: vec![vec![0.0; actions]; states],
            frozen: vec![vec![0.0; actions]; states],
            gamma,
            step,
            refresh_every: 100,
            updates: 0,
        })
    }
}

/// One regression step of R̂(x_{t-1}, y_t) toward s_t + γ R̂_frozen(x_t,
/// y_{t+1}). Returns the TD error. `next` is None at an episode end,
/// where the target is the immediate reward.
pub fn td_update(
    learner: &mut TdLearner,
    prev_state: usize,
    action: usize,
    reward: f64,
    next: Option<(usize, usize)>,
) -> f64 {
    let target = match next {
        Some((next_state, next_action)) => reward + learner.gamma * learner.frozen[next_state][next_action],
        None => reward,
    };
    let err = learner.q[prev_state][action] - target;
    learner.q[prev_state][action] -= learner.step * err;
    learner.updates += 1;
    if learner.updates % learner.refresh_every == 0 {
        learner.frozen = learner.q.clone();
    }
    err
}

/// Exact Q^π for a fixed per-state policy by solving the linear Bellman
/// system (I − γ P Π) Q = R over state-action pairs. Terminal states
/// contribute no continuation.
pub fn exact_q_policy_eval(env: &ToyEnv, policy_probs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (transitions, rewards, gamma, terminal) = match env {
        ToyEnv::ChainMdp {
            transitions,
            rewards,
            gamma,
            terminal,
            ..
        } => (transitions, rewards, *gamma, *terminal),
        ToyEnv::Bandit { rewards, .. } => {
            // Single state: Q(y) is the expected reward.
            return Ok(vec![rewards.clone()]);
        }
    };
    let n = rewards.len();
    let a = transitions.len();
    let dim = n * a;
    let idx = |s: usize, y: usize| s * a + y;
    let mut mat = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    for s in 0..n {
        for y in 0..a {
            let row = idx(s, y);
            mat[row][row] += 1.0;
            for s2 in 0..n {
                let p = transitions[y][s][s2];
                if p == 0.0 {
                    continue;
                }
                rhs[row] += p * rewards[s2];
                if Some(s2) == terminal {
                    continue;
                }
                for y2 in 0..a {
                    mat[row][idx(s2, y2)] -= gamma * p * policy_probs[s2][y2];
                }
            }
        }
    }
    let flat = linalg::solve(&mat, &rhs)?;
    Ok((0..n).map(|s| (0..a).map(|y| flat[idx(s, y)]).collect()).collect())
}

/// Exact optimal state values by value iteration (oracle for training
/// outcomes).
pub fn value_iteration(env: &ToyEnv, sweeps: usize) -> Result<Vec<f64>> {
    let (transitions, rewards, gamma, terminal) = match env {
        ToyEnv::ChainMdp {
            transitions,
            rewards,
            gamma,
            terminal,
            ..
        } => (transitions, rewards, *gamma, *terminal),
        ToyEnv::Bandit { rewards, .. } => {
            return Ok(vec![rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)]);
        }
    };
    let n = rewards.len();
    let mut v = vec![0.0; n];
    for _ in 0..sweeps {
        let mut next = vec![0.0; n];
        for s in 0..n {
            if Some(s) == terminal {
                next[s] = 0.0;
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for mat in transitions {
                let mut q = 0.0;
                for s2 in 0..n {
                    let cont = if Some(s2) == terminal { 0.0 } else { gamma * v[s2] };
                    q += mat[s][s2] * (rewards[s2] + cont);
                }
                best = best.max(q);
            }
            next[s] = best;
        }
        v = next;
    }
    Ok(v)
}

/// Exact value of a fixed policy at state 0 (episode start).
pub fn exact_policy_value(env: &ToyEnv, policy_probs: &[Vec<f64>]) -> Result<f64> {
    let q = exact_q_policy_eval(env, policy_probs)?;
    Ok(policy_probs[0].iter().zip(&q[0]).map(|(p, qv)| p * qv).sum())
}

#[derive(Debug, Clone)]
pub struct AcConfig {
    pub actor_step: f64,
    pub critic_step: f64,
    pub steps: usize,
}

impl Default for AcConfig {
    fn default() -> Self {
        AcConfig {
            actor_step: 0.1,
            critic_step: 0.2,
            steps: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainLogEntry {
    pub step: usize,
    pub mean_td_error: f64,
    pub greedy_prob: f64,
}

/// Interleave TD critic updates with advantage-weighted actor steps over
/// rolled-out episodes.
pub fn actor_critic_train(
    env: &ToyEnv,
    ac: &mut ActorCritic,
    config: &AcConfig,
    rng: &mut RngStream,
) -> Result<Vec<TrainLogEntry>> {
    let mut learner = TdLearner::new(env.states(), env.actions(), env.gamma().min(0.999), config.critic_step)?;
    learner.q = ac.q.clone();
    let mut log = Vec::new();
    let mut steps_done = 0;
    while steps_done < config.steps {
        let policy = ac.policy.clone();
        let episode: Episode = env.rollout(|s| policy.probs(s), rng)?;
        if episode.is_empty() {
            continue;
        }
        let mut td_sum = 0.0;
        for t in 0..episode.len() {
            let next = if t + 1 < episode.len() {
                Some((episode.states[t + 1], episode.actions[t + 1]))
            } else {
                None
            };
            td_sum += td_update(
                &mut learner,
                episode.states[t],
                episode.actions[t],
                episode.rewards[t],
                next,
            )
            .abs();
            steps_done += 1;
        }
        ac.q = learner.q.clone();
        // Actor: advantage-weighted log-probability ascent per visited
        // transition.
        for t in 0..episode.len() {
            let (x, y) = (episode.states[t], episode.actions[t]);
            let adv = advantage(ac, x, y)?;
            let mut g = ac.policy.grad_log_prob(x, y);
            grad_scale(&mut g, adv);
            ac.policy.apply_gradient(&g, config.actor_step);
        }
        let greedy = best_action_prob(ac, 0);
        log.push(TrainLogEntry {
            step: steps_done,
            mean_td_error: td_sum / episode.len() as f64,
            greedy_prob: greedy,
        });
    }
    Ok(log)
}

fn best_action_prob(ac: &ActorCritic, state: usize) -> f64 {
    let p = ac.policy.probs(state);
    p.iter().cloned().fold(0.0, f64::max)
}
