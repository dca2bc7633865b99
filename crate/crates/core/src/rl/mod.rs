//! Policy-gradient reinforcement learning on enumerable toy
//! environments: score-function estimators with and without baselines,
//! discounted returns, temporal-difference learning and actor-critic
//! training.

mod env;
mod pg;
mod td;

pub use env::{Episode, ToyEnv};
pub use pg::{
    advantage, baseline_grad, enumerated_policy_gradient, grad_variance, mean_reward_baseline_fit,
    optimal_baseline_enumerated, reinforce_grad, ActorCritic, PolicyGrad, TabularPolicy,
};
pub use td::{
    actor_critic_train, discounted_return, exact_policy_value, exact_q_policy_eval, td_update,
    value_iteration, AcConfig, TdLearner, TrainLogEntry,
};
