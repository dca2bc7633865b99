//! Enumerable toy environments.

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One trajectory: states x_0..x_T, actions y_1..y_T, rewards s_1..s_T.
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn new(states: Vec<usize>, actions: Vec<usize>, rewards: Vec<f64>) -> Result<Episode> {
        if states.len() != actions.len() + 1 || actions.len() != rewards.len() {
            return Err(Error::InvalidArg(format!(
                "episode lengths inconsistent: {} states, {} actions, {} rewards",
                states.len(),
                actions.len(),
                rewards.len()
            )));
        }
        Ok(Episode {
            states,
            actions,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum ToyEnv {
    /// Single-state problem: C arms, expected reward per arm, additive
    /// Gaussian observation noise.
    Bandit { rewards: Vec<f64>, noise_sd: f64 },
    /// Finite MDP with per-action row-stochastic transition matrices and
    /// a per-state reward collected on entering a state. An episode stops
    /// at the terminal state (if any) or after `horizon` steps.
    ChainMdp {
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<f64>,
        gamma: f64,
        terminal: Option<usize>,
        horizon: usize,
    },
}

impl ToyEnv {
    pub fn bandit(rewards: Vec<f64>, noise_sd: f64) -> Result<ToyEnv> {
        if rewards.is_empty() {
            return Err(Error::InvalidArg("bandit: no arms".into()));
        }
        Ok(ToyEnv::Bandit { rewards, noise_sd })
    }

    /// `transitions[action][from][to]`; every row must sum to one.
    pub fn chain_mdp(
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<f64>,
        gamma: f64,
        terminal: Option<usize>,
        horizon: usize,
    ) -> Result<ToyEnv> {
        let n = rewards.len();
        if transitions.is_empty() {
            return Err(Error::InvalidArg("chain mdp: no actions".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArg(format!("discount {gamma} outside [0, 1]")));
        }
        for (a, mat) in transitions.iter().enumerate() {
            if mat.len() != n {
                return Err(Error::shape("chain_mdp", format!("action {a}: {} rows, {n} states", mat.len())));
            }
            for (s, row) in mat.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::shape("chain_mdp", format!("action {a} state {s}: ragged row")));
                }
                let total: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArg(format!(
                        "action {a} state {s}: transition row sums to {total}"
                    )));
                }
            }
        }
        Ok(ToyEnv::ChainMdp {
            transitions,
            rewards,
            gamma,
            terminal,
            horizon,
        })
    }

    pub fn states(&self) -> usize {
        match self {
            ToyEnv::Bandit { .. } => 1,
            ToyEnv::ChainMdp { rewards, .. } => rewards.len(),
        }
    }

    pub fn actions(&self) -> usize {
        match self {
            ToyEnv::Bandit { rewards, .. } => rewards.len(),
            ToyEnv::ChainMdp { transitions, .. } => transitions.len(),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            ToyEnv::Bandit { .. } => 0.0,
            ToyEnv::ChainMdp { gamma, .. } => *gamma,
        }
    }

    /// Sample the next state and the reward of the transition.
    pub fn step(&self, state: usize, action: usize, rng: &mut RngStream) -> (usize, f64) {
        match self {
            ToyEnv::Bandit { rewards, noise_sd } => (0, rewards[action] + noise_sd * rng.normal()),
            ToyEnv::ChainMdp {
                transitions, rewards, ..
            } => {
                let next = rng.categorical(&transitions[action][state]);
                (next, rewards[next])
            }
        }
    }

    /// Roll out one episode from state 0 under a per-state action
    /// distribution.
    pub fn rollout(&self, policy: impl Fn(usize) -> Vec<f64>, rng: &mut RngStream) -> Result<Episode> {
        match self {
            ToyEnv::Bandit { .. } => {
                let probs = policy(0);
                let action = rng.categorical(&probs);
                let (_, reward) = self.step(0, action, rng);
                Episode::new(vec![0, 0], vec![action], vec![reward])
            }
            ToyEnv::ChainMdp { terminal, horizon, .. } => {
                let mut states = vec![0usize];
                let mut actions = Vec::new();
                let mut rewards = Vec::new();
                let mut current = 0usize;
                for _ in 0..*horizon {
                    if Some(current) == *terminal {
                        break;
                    }
                    let probs = policy(current);
                    let action = rng.categorical(&probs);
                    let (next, reward) = self.step(current, action, rng);
                    states.push(next);
                    actions.push(action);
                    rewards.push(reward);
                    current = next;
                }
                Episode::new(states, actions, rewards)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_length_invariant() {
        assert!(Episode::new(vec![0, 1], vec![0], vec![1.0]).is_ok());
        assert!(Episode::new(vec![0], vec![0], vec![1.0]).is_err());
        assert!(Episode::new(vec![0, 1], vec![0], vec![]).is_err());
    }

    #[test]
    fn transition_rows_must_be_stochastic() {
        let bad = vec![vec![vec![0.5, 0.4], vec![0.0, 1.0]]];
        assert!(ToyEnv::chain_mdp(bad, vec![0.0, 1.0], 0.9, None, 10).is_err());
        let good = vec![vec![vec![0.5, 0.5], vec![0.0, 1.0]]];
        assert!(ToyEnv::chain_mdp(good, vec![0.0, 1.0], 0.9, None, 10).is_ok());
    }

    #[test]
    fn rollout_respects_terminal_and_horizon() {
        let t = vec![vec![vec![0.0, 1.0], vec![0.0, 1.0]]];
        let env = ToyEnv::chain_mdp(t, vec![0.0, 1.0], 0.9, Some(1), 10).unwrap();
        let mut rng = RngStream::new(1);
        let ep = env.rollout(|_| vec![1.0], &mut rng).unwrap();
        assert_eq!(ep.len(), 1);
        assert_eq!(ep.states, vec![0, 1]);

        let t = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let env = ToyEnv::chain_mdp(t, vec![0.0, 1.0], 0.9, None, 7).unwrap();
        let ep = env.rollout(|_| vec![1.0], &mut rng).unwrap();
        assert_eq!(ep.len(), 7);
    }
}
