//! Score-function (policy-gradient) estimators over tabular softmax
//! policies.
//!
//! For a softmax policy the gradient of log p(y|x) with respect to the
//! logit row of x is onehot(y) − p(·|x); estimators weight that score by
//! the (centered) reward. A baseline that does not depend on the sampled
//! action leaves the estimator unbiased and can only shrink its
//! variance when chosen near the expected reward.

use crate::error::{Error, Result};
use crate::losses::EnergyVector;
use crate::rng::RngStream;

/// Same shape as the policy logits: one row per state.
pub type PolicyGrad = Vec<Vec<f64>>;

#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn uniform(states: usize, actions: usize) -> TabularPolicy {
        TabularPolicy {
            logits: vec![vec![0.0; actions]; states],
        }
    }

    pub fn states(&self) -> usize {
        self.logits.len()
    }

    pub fn actions(&self) -> usize {
        self.logits[0].len()
    }

    pub fn probs(&self, x: usize) -> Vec<f64> {
        // Softmax of the logits; energies are negated logits.
        let e = EnergyVector::new(self.logits[x].iter().map(|v| -v).collect()).unwrap();
        crate::losses::energies_to_probs(&e)
    }

    pub fn sample(&self, x: usize, rng: &mut RngStream) -> usize {
        let p = self.probs(x);
        rng.categorical(&p)
    }

    /// ∇_logits log p(y|x): onehot(y) − p on row x, zero elsewhere.
    pub fn grad_log_prob(&self, x: usize, y: usize) -> PolicyGrad {
        let mut g = vec![vec![0.0; self.actions()]; self.states()];
        let p = self.probs(x);
        for a in 0..self.actions() {
            g[x][a] = if a == y { 1.0 - p[a] } else { -p[a] };
        }
        g
    }

    pub fn apply_gradient(&mut self, g: &PolicyGrad, step: f64) {
        for (row, grow) in self.logits.iter_mut().zip(g) {
            for (v, gv) in row.iter_mut().zip(grow) {
                *v += step * gv;
            }
        }
    }
}

pub fn grad_scale(g: &mut PolicyGrad, factor: f64) {
    for row in g.iter_mut() {
        for v in row.iter_mut() {
            *v *= factor;
        }
    }
}

pub fn grad_add(into: &mut PolicyGrad, g: &PolicyGrad, factor: f64) {
    for (row, grow) in into.iter_mut().zip(g) {
        for (v, gv) in row.iter_mut().zip(grow) {
            *v += factor * gv;
        }
    }
}

fn grad_norm_sq(g: &PolicyGrad) -> f64 {
    g.iter().map(|row| crate::linalg::norm_sq(row)).sum()
}

/// Single-draw estimator R(ỹ)·∇ log p(ỹ|x) with ỹ ~ policy.
pub fn reinforce_grad(
    x: usize,
    policy: &TabularPolicy,
    reward: impl Fn(usize, &mut RngStream) -> f64,
    rng: &mut RngStream,
) -> PolicyGrad {
    let y = policy.sample(x, rng);
    let r = reward(y, rng);
    let mut g = policy.grad_log_prob(x, y);
    grad_scale(&mut g, r);
    g
}

/// (R(ỹ) − b(x))·∇ log p(ỹ|x); the baseline must not depend on the
/// sampled action.
pub fn baseline_grad(
    x: usize,
    policy: &TabularPolicy,
    reward: impl Fn(usize, &mut RngStream) -> f64,
    baseline: impl Fn(usize) -> f64,
    rng: &mut RngStream,
) -> PolicyGrad {
    let y = policy.sample(x, rng);
    let r = reward(y, rng);
    let mut g = policy.grad_log_prob(x, y);
    grad_scale(&mut g, r - baseline(x));
    g
}

/// Exact gradient Σ_y p(y|x) R(y) ∇ log p(y|x) by enumeration, the
/// oracle that the Monte-Carlo estimators are checked against.
pub fn enumerated_policy_gradient(
    x: usize,
    policy: &TabularPolicy,
    expected_reward: impl Fn(usize) -> f64,
) -> PolicyGrad {
    let p = policy.probs(x);
    let mut out = vec![vec![0.0; policy.actions()]; policy.states()];
    for y in 0..policy.actions() {
        let g = policy.grad_log_prob(x, y);
        grad_add(&mut out, &g, p[y] * expected_reward(y));
    }
    out
}

/// E‖ĝ‖² − ‖Eĝ‖² estimated from M draws of the baseline estimator.
pub fn grad_variance(
    x: usize,
    policy: &TabularPolicy,
    reward: impl Fn(usize, &mut RngStream) -> f64,
    baseline: impl Fn(usize) -> f64,
    draws: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if draws < 2 {
        return Err(Error::InvalidArg("grad_variance: need M >= 2 draws".into()));
    }
    let mut mean: Option<PolicyGrad> = None;
    let mut mean_norm_sq = 0.0;
    for _ in 0..draws {
        let g = baseline_grad(x, policy, &reward, &baseline, rng);
        mean_norm_sq += grad_norm_sq(&g) / draws as f64;
        match &mut mean {
            Some(m) => grad_add(m, &g, 1.0 / draws as f64),
            None => {
                let mut m = g.clone();
                grad_scale(&mut m, 1.0 / draws as f64);
                mean = Some(m);
            }
        }
    }
    Ok(mean_norm_sq - grad_norm_sq(&mean.unwrap()))
}

/// The variance-optimal constant baseline b* = E[R‖s‖²]/E[‖s‖²] on an
/// enumerable bandit, computed exactly. A diagnostic, not a training
/// path: the expectations need one reward query per action.
pub fn optimal_baseline_enumerated(
    x: usize,
    policy: &TabularPolicy,
    expected_reward: impl Fn(usize) -> f64,
) -> f64 {
    let p = policy.probs(x);
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..policy.actions() {
        let s = grad_norm_sq(&policy.grad_log_prob(x, y));
        num += p[y] * expected_reward(y) * s;
        den += p[y] * s;
    }
    num / den
}

/// Tabular value estimate per state.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

/// One regression step of b̂(x) toward observed rewards: gradient of the
/// summed ½(b̂(x) − R)² over the history, scaled by `step`.
pub fn mean_reward_baseline_fit(history: &[(usize, f64)], value: &mut ValueTable, step: f64) -> Result<()> {
    if history.is_empty() {
        return Err(Error::InvalidArg("baseline fit: empty history".into()));
    }
    let mut grad = vec![0.0; value.values.len()];
    for &(x, r) in history {
        grad[x] += (value.values[x] - r) / history.len() as f64;
    }
    for (v, g) in value.values.iter_mut().zip(&grad) {
        *v -= step * g;
    }
    Ok(())
}

/// Policy, a Q head, and an optional separate value head. Without the
/// value head, the baseline is the policy-expected Q.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub policy: TabularPolicy,
    pub q: Vec<Vec<f64>>,
    pub value: Option<ValueTable>,
}

impl ActorCritic {
    pub fn new(states: usize, actions: usize, with_value_head: bool) -> ActorCritic {
        ActorCritic {
            policy: TabularPolicy::uniform(states, actions),
            q: vec![vec![0.0; actions]; states],
            value: if with_value_head {
                Some(ValueTable {
                    values: vec![0.0; states],
                })
            } else {
                None
            },
        }
    }
}

/// R̂(x, y) − b̂(x), with b̂ the value head when present and the policy
/// expectation Σ_y π(y|x) R̂(x, y) otherwise.
pub fn advantage(ac: &ActorCritic, x: usize, y: usize) -> Result<f64> {
    if y >= ac.q[x].len() {
        return Err(Error::InvalidArg(format!("action {y} out of {}", ac.q[x].len())));
    }
    let baseline = match &ac.value {
        Some(v) => v.values[x],
        None => {
            let p = ac.policy.probs(x);
            p.iter().zip(&ac.q[x]).map(|(pi, qi)| pi * qi).sum()
        }
    };
    Ok(ac.q[x][y] - baseline)
}
