//! Experience storage: the off-policy replay ring, the on-policy rollout
//! buffer and the transition log exchanged with the diagnostics pipeline.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub const DEFAULT_REPLAY_CAPACITY: usize = 1_000_000;

/// One off-policy interaction: the policy action `a` and the action `ã`
/// actually executed after exploration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub executed_action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True termination only; horizon truncation keeps bootstrapping.
    pub done: bool,
}

/// Fixed-capacity FIFO replay buffer.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    storage: Vec<Transition>,
    // slot that the next push overwrites once full
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            state_dim,
            action_dim,
            capacity,
            storage: Vec::new(),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        check_len("transition state", self.state_dim, transition.state.len())?;
        check_len(
            "transition next_state",
            self.state_dim,
            transition.next_state.len(),
        )?;
        check_len(
            "transition action",
            self.action_dim,
            transition.action.len(),
        )?;
        check_len(
            "transition executed_action",
            self.action_dim,
            transition.executed_action.len(),
        )?;
        if !transition.reward.is_finite() {
            return Err(Error::NonFinite("transition reward".into()));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            self.storage[self.head] = transition;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.storage.len();
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.random_range(0..n)])
            .collect())
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.storage.split_at(self.head);
        older.iter().chain(newer.iter())
    }
}

/// Column-major view of a sampled batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub executed_actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(transitions: &[&Transition]) -> Self {
        let n = transitions.len();
        let sd = transitions.first().map_or(0, |t| t.state.len());
        let ad = transitions.first().map_or(0, |t| t.action.len());
        let rows = |f: &dyn Fn(&Transition) -> &[f64], d: usize| {
            Array2::from_shape_fn((n, d), |(i, j)| f(transitions[i])[j])
        };
        Self {
            states: rows(&|t| &t.state, sd),
            actions: rows(&|t| &t.action, ad),
            executed_actions: rows(&|t| &t.executed_action, ad),
            rewards: transitions.iter().map(|t| t.reward).collect(),
            next_states: rows(&|t| &t.next_state, sd),
            dones: transitions
                .iter()
                .map(|t| if t.done { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// One on-policy step: the exploration direction `eta` replaces the executed
/// action of the off-policy record.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    /// Observation as seen by the networks (already normalized).
    pub state: Vec<f64>,
    pub direction: Vec<f64>,
    /// Unclipped policy sample.
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Episode boundary (termination or truncation) after this step.
    pub episode_end: bool,
}

#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    horizon: usize,
    steps: Vec<RolloutStep>,
}

impl RolloutBuffer {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("rollout horizon must be positive".into()));
        }
        Ok(Self {
            horizon,
            steps: Vec::with_capacity(horizon),
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn push(&mut self, step: RolloutStep) {
        self.steps.push(step);
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() >= self.horizon
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[RolloutStep] {
        &self.steps
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    pub fn rewards_to_go(&self, discount: f64) -> Vec<f64> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let ends: Vec<bool> = self.steps.iter().map(|s| s.episode_end).collect();
        rewards_to_go(&rewards, &ends, discount)
    }
}

/// Backward discounted sums `R_t = r_t + discount * R_{t+1}`, restarting
/// after every step flagged as an episode end. `discount = 1` gives the plain
/// reversed sum of rewards.
pub fn rewards_to_go(rewards: &[f64], episode_ends: &[bool], discount: f64) -> Vec<f64> {
    debug_assert_eq!(rewards.len(), episode_ends.len());
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        if episode_ends[t] {
            running = 0.0;
        }
        running = rewards[t] + discount * running;
        out[t] = running;
    }
    out
}

/// One line of the transition log (JSON Lines).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step: u64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub executed_action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub td_error: Option<f64>,
}

impl TransitionRecord {
    pub fn new(step: u64, t: &Transition) -> Self {
        Self {
            step,
            state: t.state.clone(),
            action: t.action.clone(),
            executed_action: t.executed_action.clone(),
            reward: t.reward,
            next_state: t.next_state.clone(),
            done: t.done,
            td_error: None,
        }
    }

    pub fn transition(&self) -> Transition {
        Transition {
            state: self.state.clone(),
            action: self.action.clone(),
            executed_action: self.executed_action.clone(),
            reward: self.reward,
            next_state: self.next_state.clone(),
            done: self.done,
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TransitionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TransitionRecord>> {
    let mut records = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
