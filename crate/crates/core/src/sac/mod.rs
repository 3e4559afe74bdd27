//! Soft actor-critic with critic ensembles, randomized target subsets,
//! dropout / LayerNorm critics and automatic temperature tuning.

mod agent;
mod config;
mod critic;
mod policy;

pub use agent::{streams, Agent, Dispatch, TargetInfo, UpdateReport};
pub use config::{AgentConfig, Variant};
pub use critic::{critic_input_into, ema_update, subset_min, CriticEnsemble};
pub use policy::{log_tanh_jacobian, squashed_log_prob, ActionMode, Policy, PolicySample, ACTION_LIMIT};
