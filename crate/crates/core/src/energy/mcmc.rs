//! Metropolis-Hastings over arbitrary state types.
//!
//! Acceptance ratios are formed in log-space; a rejected proposal keeps
//! the current state (the point-mass term of the transition operator).

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Proposal distribution: sample a candidate given the current state and
/// evaluate the log-density of a move in either direction.
pub trait Proposal<S> {
    fn sample(&self, from: &S, rng: &mut RngStream) -> S;
    fn log_density(&self, from: &S, to: &S) -> f64;
}

/// Isotropic Gaussian random walk on vectors (symmetric).
#[derive(Debug, Clone)]
pub struct ScalarRandomWalk {
    pub sd: f64,
}

impl Proposal<Vec<f64>> for ScalarRandomWalk {
    fn sample(&self, from: &Vec<f64>, rng: &mut RngStream) -> Vec<f64> {
        from.iter().map(|v| v + self.sd * rng.normal()).collect()
    }

    fn log_density(&self, from: &Vec<f64>, to: &Vec<f64>) -> f64 {
        let d2: f64 = from.iter().zip(to).map(|(a, b)| (a - b) * (a - b)).sum();
        -0.5 * d2 / (self.sd * self.sd)
    }
}

#[derive(Debug, Clone)]
pub struct MarkovChainState<S> {
    pub current: S,
    pub steps: u64,
    pub accepted: u64,
}

impl<S> MarkovChainState<S> {
    pub fn new(initial: S) -> MarkovChainState<S> {
        MarkovChainState {
            current: initial,
            steps: 0,
            accepted: 0,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// One M-H transition: propose, accept with
/// min(1, p̃(x) q(x'|x) / (p̃(x') q(x|x'))), otherwise stay.
pub fn mh_step<S: Clone, P: Proposal<S>>(
    state: &mut MarkovChainState<S>,
    unnorm_logp: impl Fn(&S) -> f64,
    proposal: &P,
    rng: &mut RngStream,
) -> Result<bool> {
    let current_lp = unnorm_logp(&state.current);
    if current_lp == f64::NEG_INFINITY {
        return Err(Error::InvalidArg("mh_step: zero target density at current state".into()));
    }
    let candidate = proposal.sample(&state.current, rng);
    let forward = proposal.log_density(&state.current, &candidate);
    if forward == f64::NEG_INFINITY {
        return Err(Error::InvalidArg("mh_step: zero proposal density at proposed move".into()));
    }
    let backward = proposal.log_density(&candidate, &state.current);
    let log_alpha = (unnorm_logp(&candidate) + backward - current_lp - forward).min(0.0);
    state.steps += 1;
    let accept = rng.uniform().ln() < log_alpha;
    if accept {
        state.current = candidate;
        state.accepted += 1;
    }
    Ok(accept)
}

/// Run a chain with burn-in and thinning, collecting `keep` samples.
pub fn mh_run<S: Clone, P: Proposal<S>>(
    initial: S,
    unnorm_logp: impl Fn(&S) -> f64,
    proposal: &P,
    burn_in: usize,
    thin: usize,
    keep: usize,
    rng: &mut RngStream,
) -> Result<(Vec<S>, MarkovChainState<S>)> {
    if thin == 0 {
        return Err(Error::InvalidArg("mh_run: thinning interval must be >= 1".into()));
    }
    let mut state = MarkovChainState::new(initial);
    for _ in 0..burn_in {
        mh_step(&mut state, &unnorm_logp, proposal, rng)?;
    }
    let mut out = Vec::with_capacity(keep);
    while out.len() < keep {
        for _ in 0..thin {
            mh_step(&mut state, &unnorm_logp, proposal, rng)?;
        }
        out.push(state.current.clone());
    }
    Ok((out, state))
}
