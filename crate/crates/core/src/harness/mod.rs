//! Training loops, evaluation protocol, sweeps and result files.

mod config;
mod off_policy;
mod on_policy;
mod output;
mod sweep;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent_off::OffPolicyAgent;
use crate::agent_on::OnPolicyAgent;
use crate::buffer::TransitionRecord;
use crate::discover::{OffPolicyExplorer, OnPolicyExplorer};
use crate::env::{Env, EnvName};
use crate::error::{Error, Result};
use crate::rng::{stream_seed, Stream};

pub use config::{Ablation, AgentConfig, Algo, Exploration, DEFAULT_EVAL_SEED_OFFSET, LAMBDA_GRID};
pub use output::{
    read_results_csv, read_snapshot, results_csv, summary_csv, write_run, Manifest, SeedManifest,
    SummaryRow, DIVERGENCE_PREFIX, MANIFEST_FILE, MODEL_PREFIX, RESULTS_FILE, SUMMARY_FILE,
    TRANSITIONS_PREFIX,
};
pub use sweep::{sweep, sweep_settings, SweepMode, SweepResult};

/// Deterministic action used when evaluating a policy.
pub trait EvalPolicy {
    fn eval_action(&self, raw_state: &[f64]) -> Result<Vec<f64>>;
}

impl EvalPolicy for OffPolicyAgent {
    fn eval_action(&self, raw_state: &[f64]) -> Result<Vec<f64>> {
        self.select_action(raw_state)
    }
}

/// Mean action with the exploration direction replaced by zeros.
impl EvalPolicy for OnPolicyAgent {
    fn eval_action(&self, raw_state: &[f64]) -> Result<Vec<f64>> {
        self.deterministic_action(raw_state, &vec![0.0; self.direction_dim()])
    }
}

impl<F: Fn(&[f64]) -> Result<Vec<f64>>> EvalPolicy for F {
    fn eval_action(&self, raw_state: &[f64]) -> Result<Vec<f64>> {
        self(raw_state)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub seed: u64,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `returns`.
    pub std: f64,
}

impl EvalRecord {
    pub fn from_returns(step: u64, seed: u64, returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            step,
            seed,
            returns,
            mean,
            std,
        }
    }
}

/// Runs `episodes` episodes of the deterministic policy in a fresh
/// environment seeded with `env_seed`, so every call sees the same start
/// states. Nothing in the policy is mutated.
pub fn evaluate<P: EvalPolicy + ?Sized>(
    policy: &P,
    env_name: EnvName,
    max_episode_steps: usize,
    episodes: usize,
    env_seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env = Env::new(env_name, env_seed, max_episode_steps);
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut total = 0.0;
        loop {
            let action = policy.eval_action(&state)?;
            let step = env.step(&action)?;
            total += step.reward;
            if step.done || step.truncated {
                break;
            }
            state = step.next_state;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Trailing moving average; the first entries average over what is available.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("smoothing window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &series[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

/// Mean of the last (up to) ten evaluation means.
pub fn last10_mean(evals: &[EvalRecord]) -> f64 {
    let tail = &evals[evals.len().saturating_sub(10)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|e| e.mean).sum::<f64>() / tail.len() as f64
}

/// Update counters and the steps at which scheduled updates happened.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleLog {
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub explorer_updates: u64,
    pub target_updates: u64,
    pub target_explorer_updates: u64,
    /// On-policy rollouts consumed.
    pub policy_updates: u64,
    pub actor_update_steps: Vec<u64>,
    pub explorer_update_steps: Vec<u64>,
    pub target_explorer_steps: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub step: u64,
    pub seed: u64,
    pub message: String,
}

/// Final networks of a run, enough to recompute TD-errors afterwards.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Snapshot {
    OffPolicy {
        agent: OffPolicyAgent,
        explorer: Option<OffPolicyExplorer>,
    },
    OnPolicy {
        agent: OnPolicyAgent,
        explorer: Option<OnPolicyExplorer>,
    },
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub evals: Vec<EvalRecord>,
    pub schedule: ScheduleLog,
    /// Action sent to the environment at every training step.
    pub executed_actions: Vec<Vec<f64>>,
    /// Filled when `record_transitions` is set.
    pub transitions: Vec<TransitionRecord>,
    pub snapshot: Snapshot,
    pub divergence: Option<DivergenceRecord>,
}

impl SeedRun {
    pub fn last10_mean(&self) -> f64 {
        last10_mean(&self.evals)
    }
}

/// Seeds of every random stream used by a run with master seed `seed`.
pub fn stream_seeds(seed: u64) -> BTreeMap<String, u64> {
    Stream::ALL
        .iter()
        .map(|s| {
            let name = serde_json::to_value(s)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_else(|| format!("{s:?}"));
            (name, stream_seed(seed, *s))
        })
        .collect()
}

/// Trains and evaluates one seed.
pub fn run_seed(config: &AgentConfig, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    if config.algo.is_off_policy() {
        off_policy::train(config, seed)
    } else {
        on_policy::train(config, seed)
    }
}

/// Runs every configured seed and, when `out_dir` is given, writes the
/// result files there.
pub fn run(config: &AgentConfig, out_dir: Option<&Path>) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let runs = config
        .seeds
        .iter()
        .map(|&seed| run_seed(config, seed))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out_dir {
        write_run(dir, config, &runs)?;
    }
    Ok(runs)
}

/// Turns a non-finite training failure into a divergence record; anything
/// else stays an error.
fn divergence(err: Error, step: u64, seed: u64) -> Result<DivergenceRecord> {
    match err {
        Error::NonFinite(what) => Ok(DivergenceRecord {
            step,
            seed,
            message: format!("non-finite {what}"),
        }),
        other => Err(other),
    }
}
