//! TD-error directed explorers.
//!
//! The off-policy explorer adds `lambda * xi(s)` to the policy action and is
//! trained to maximize the critic's squared TD-error under that perturbation;
//! a target explorer perturbs the next action inside the bootstrapped target.
//! The on-policy explorer emits a state-space direction `eta = lambda * xi(s)`
//! that the policy and value network consume alongside the state, and is
//! trained to maximize the value network's squared prediction error.
//!
//! Both explorers mirror the agent's actor: same hidden layout, activation,
//! learning rate and update period.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent_off::{symmetric_bound, ActionValue};
use crate::env::EnvSpec;
use crate::error::{check_len, Error, Result};
use crate::nn::{adam_step, soft_update, Activation, AdamConfig, AdamState, Mlp, OutputActivation};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Update the explorer on every critic step instead of on actor steps.
    pub no_delayed_updates: bool,
    /// Perturb next actions with the behavioral explorer.
    pub no_target_network: bool,
    /// Leave next actions unperturbed in the target.
    pub no_target_smoothing: bool,
}

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn any(&self) -> bool {
        self.no_delayed_updates || self.no_target_network || self.no_target_smoothing
    }
}

/// The settings an explorer must share with the actor it accompanies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub update_period: u64,
}

impl NetworkSpec {
    /// Fails unless `self` (the explorer) mirrors `actor` exactly.
    pub fn check_mirrors(&self, actor: &NetworkSpec) -> Result<()> {
        let mut diffs = Vec::new();
        if self.hidden != actor.hidden {
            diffs.push(format!(
                "hidden sizes {:?} vs actor {:?}",
                self.hidden, actor.hidden
            ));
        }
        if self.activation != actor.activation {
            diffs.push(format!(
                "activation {:?} vs actor {:?}",
                self.activation, actor.activation
            ));
        }
        if self.learning_rate != actor.learning_rate {
            diffs.push(format!(
                "learning rate {} vs actor {}",
                self.learning_rate, actor.learning_rate
            ));
        }
        if self.update_period != actor.update_period {
            diffs.push(format!(
                "update period {} vs actor {}",
                self.update_period, actor.update_period
            ));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "explorer must mirror the actor: {}",
                diffs.join("; ")
            )))
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )))
    }
}

fn layers(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    [input]
        .into_iter()
        .chain(hidden.iter().copied())
        .chain([output])
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OffPolicyExplorer {
    pub explorer: Mlp,
    pub target: Mlp,
    optimizer: AdamState,
    pub lambda: f64,
    pub update_period: u64,
    pub ablations: Ablations,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl OffPolicyExplorer {
    pub fn new<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        actor: &NetworkSpec,
        lambda: f64,
        ablations: Ablations,
        env: &EnvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.check_mirrors(actor)?;
        check_lambda(lambda)?;
        let half_range = symmetric_bound(env)?;
        let explorer = Mlp::init(
            &layers(env.state_dim, &spec.hidden, env.action_dim),
            spec.activation,
            OutputActivation::ScaledTanh { scale: half_range },
            rng,
        )?;
        Ok(Self {
            target: explorer.clone(),
            optimizer: AdamState::for_mlp(&explorer, AdamConfig::new(spec.learning_rate)),
            explorer,
            lambda,
            update_period: spec.update_period,
            ablations,
            action_low: env.action_low.clone(),
            action_high: env.action_high.clone(),
        })
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    fn clip_rows(&self, mut actions: Array2<f64>) -> Array2<f64> {
        for mut row in actions.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = v.clamp(self.action_low[j], self.action_high[j]);
            }
        }
        actions
    }

    /// `lambda * xi(s)` for a batch of normalized states.
    pub fn directions(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.explorer.forward_batch(states)? * self.lambda)
    }

    /// Executed action `clip(a + lambda * xi(s))`.
    pub fn perturb_action(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_len("perturb_action action", self.action_low.len(), action.len())?;
        let xi = self.explorer.forward(state)?;
        Ok(action
            .iter()
            .zip(&xi)
            .enumerate()
            .map(|(j, (a, x))| (a + self.lambda * x).clamp(self.action_low[j], self.action_high[j]))
            .collect())
    }

    /// Next action used inside the TD target: `clip(a' + lambda * xi'(s'))`
    /// with the ablations applied.
    pub fn perturb_target_actions(
        &self,
        next_states: ArrayView2<f64>,
        next_actions: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if self.ablations.no_target_smoothing {
            return Ok(next_actions.to_owned());
        }
        let net = if self.ablations.no_target_network {
            &self.explorer
        } else {
            &self.target
        };
        let xi = net.forward_batch(next_states)?;
        Ok(self.clip_rows(&next_actions + &(xi * self.lambda)))
    }

    /// Batch-mean squared TD-error `(y - Q(s, actor(s) + lambda * xi(s)))^2`.
    pub fn objective<Q: ActionValue + ?Sized>(
        &self,
        actor: &Mlp,
        critic: &Q,
        states: ArrayView2<f64>,
        targets: &Array1<f64>,
    ) -> Result<f64> {
        let actions = actor.forward_batch(states)?;
        let perturbed = actions + self.directions(states)?;
        let (q, _) = critic.q_and_action_grad(states, perturbed.view())?;
        Ok((targets - &q).mapv(|d| d * d).mean().unwrap_or(0.0))
    }

    /// One Adam ascent step on the batch-mean squared TD-error, with the
    /// targets held fixed. Actor and critic are read only. Returns the
    /// objective before the step.
    pub fn update<Q: ActionValue + ?Sized>(
        &mut self,
        actor: &Mlp,
        critic: &Q,
        states: ArrayView2<f64>,
        targets: &Array1<f64>,
    ) -> Result<f64> {
        check_len("explorer update targets", states.nrows(), targets.len())?;
        let n = states.nrows() as f64;
        let actions = actor.forward_batch(states)?;
        let cache = self.explorer.forward_cached(states)?;
        let perturbed = actions + cache.output() * self.lambda;
        let (q, dq_da) = critic.q_and_action_grad(states, perturbed.view())?;
        let td = targets - &q;
        let objective = td.mapv(|d| d * d).mean().unwrap_or(0.0);
        if !objective.is_finite() {
            return Err(Error::NonFinite("explorer objective".into()));
        }
        // d(-mean td^2)/dxi = (2 lambda / n) * td * dQ/da
        let scale = 2.0 * self.lambda / n;
        let upstream = &dq_da * &td.insert_axis(Axis(1)) * scale;
        let grads = self.explorer.backward_cached(&cache, upstream.view())?;
        adam_step(&mut self.explorer, &grads, &mut self.optimizer)?;
        Ok(objective)
    }

    pub fn sync_target(&mut self, tau: f64) -> Result<()> {
        soft_update(&mut self.target, &self.explorer, tau)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OnPolicyExplorer {
    pub explorer: Mlp,
    optimizer: AdamState,
    pub lambda: f64,
    pub update_period: u64,
}

impl OnPolicyExplorer {
    /// `direction_dim` equals the state dimension.
    pub fn new<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        actor: &NetworkSpec,
        lambda: f64,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.check_mirrors(actor)?;
        check_lambda(lambda)?;
        let explorer = Mlp::init(
            &layers(state_dim, &spec.hidden, state_dim),
            spec.activation,
            OutputActivation::Tanh,
            rng,
        )?;
        Ok(Self {
            optimizer: AdamState::for_mlp(&explorer, AdamConfig::new(spec.learning_rate)),
            explorer,
            lambda,
            update_period: spec.update_period,
        })
    }

    pub fn direction_dim(&self) -> usize {
        self.explorer.output_dim()
    }

    /// `eta = lambda * xi(s)` while training, zeros during evaluation.
    pub fn direction(&self, state: &[f64], mode: Mode) -> Result<Vec<f64>> {
        match mode {
            Mode::Eval => Ok(vec![0.0; self.direction_dim()]),
            Mode::Train => Ok(self
                .explorer
                .forward(state)?
                .into_iter()
                .map(|x| self.lambda * x)
                .collect()),
        }
    }

    /// Mean `(R - V(s ‖ lambda * xi(s)))^2` over the rollout states.
    pub fn objective(
        &self,
        value_net: &Mlp,
        states: ArrayView2<f64>,
        returns: &Array1<f64>,
    ) -> Result<f64> {
        let eta = self.explorer.forward_batch(states)? * self.lambda;
        let v = value_net.forward_batch(concatenate![Axis(1), states, eta].view())?;
        Ok((returns - &v.column(0))
            .mapv(|d| d * d)
            .mean()
            .unwrap_or(0.0))
    }

    /// One Adam ascent step on mean squared value error with the returns held
    /// fixed; the value network is read only. Returns the pre-step objective.
    pub fn update(
        &mut self,
        value_net: &Mlp,
        states: ArrayView2<f64>,
        returns: &Array1<f64>,
    ) -> Result<f64> {
        check_len("explorer update returns", states.nrows(), returns.len())?;
        let n = states.nrows() as f64;
        let sd = states.ncols();
        let cache = self.explorer.forward_cached(states)?;
        let eta = cache.output() * self.lambda;
        let value_cache = value_net.forward_cached(concatenate![Axis(1), states, eta].view())?;
        let residual = returns - &value_cache.output().column(0);
        let objective = residual.mapv(|d| d * d).mean().unwrap_or(0.0);
        if !objective.is_finite() {
            return Err(Error::NonFinite("explorer objective".into()));
        }
        let ones = Array2::ones((states.nrows(), 1));
        let dv_din = value_net.input_gradient_cached(&value_cache, ones.view())?;
        let dv_deta = dv_din.slice(s![.., sd..]);
        // d(-mean residual^2)/dxi = (2 lambda / n) * residual * dV/deta
        let upstream = &dv_deta * &residual.insert_axis(Axis(1)) * (2.0 * self.lambda / n);
        let grads = self.explorer.backward_cached(&cache, upstream.view())?;
        adam_step(&mut self.explorer, &grads, &mut self.optimizer)?;
        Ok(objective)
    }
}
