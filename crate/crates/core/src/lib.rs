//! TD-error directed exploration for continuous control: networks, tasks,
//! replay, DDPG/TD3/A2C agents, learned explorers, baselines, an experiment
//! harness and visitation diagnostics.

pub mod agent_off;
pub mod agent_on;
pub mod buffer;
pub mod diagnostics;
pub mod discover;
pub mod env;
pub mod error;
pub mod explore;
pub mod harness;
pub mod nn;
pub mod normalize;
pub mod rng;

pub use agent_off::{OffPolicyAgent, OffPolicyAlgo, OffPolicyConfig};
pub use agent_on::{OnPolicyAgent, OnPolicyConfig};
pub use discover::{Ablations, Mode, NetworkSpec, OffPolicyExplorer, OnPolicyExplorer};
pub use env::{make_env, Env, EnvName, EnvSpec};
pub use error::{Error, Result};
pub use harness::{AgentConfig, Algo, Exploration};
pub use nn::{Activation, Mlp, OutputActivation};
