//! Advantage actor-critic with a diagonal Gaussian policy.
//!
//! Policy and value networks read the state concatenated with an exploration
//! direction. A single combined gradient step is taken per rollout.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::buffer::RolloutBuffer;
use crate::env::EnvSpec;
use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Mlp, OutputActivation};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnPolicyConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Shared by policy, value network and log-std.
    pub learning_rate: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub initial_log_std: f64,
}

impl Default for OnPolicyConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            learning_rate: 0.0013,
            horizon: 32,
            gamma: 0.99,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            initial_log_std: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    /// Unclipped Gaussian draw; its log-probability is `log_prob`.
    pub raw: Vec<f64>,
    /// `raw` clipped to the action bounds, as sent to the environment.
    pub executed: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStats {
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
    pub clipped_grad_norm: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OnPolicyAgent {
    pub config: OnPolicyConfig,
    pub policy: Mlp,
    pub log_std: Vec<f64>,
    pub value_net: Mlp,
    optimizer: AdamState,
    state_dim: usize,
    direction_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - LOG_SQRT_2PI
        })
        .sum()
}

impl OnPolicyAgent {
    pub fn new<R: Rng + ?Sized>(
        config: OnPolicyConfig,
        spec: &EnvSpec,
        direction_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if config.max_grad_norm.is_nan() || config.max_grad_norm <= 0.0 {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        let input = spec.state_dim + direction_dim;
        let sizes = |out: usize| -> Vec<usize> {
            [input]
                .into_iter()
                .chain(config.hidden.iter().copied())
                .chain([out])
                .collect()
        };
        let policy = Mlp::init(
            &sizes(spec.action_dim),
            config.activation,
            OutputActivation::Identity,
            rng,
        )?;
        let value_net = Mlp::init(
            &sizes(1),
            config.activation,
            OutputActivation::Identity,
            rng,
        )?;
        let log_std = vec![config.initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); spec.action_dim];
        let lens: Vec<usize> = policy
            .tensors()
            .iter()
            .map(|t| t.len())
            .chain([log_std.len()])
            .chain(value_net.tensors().iter().map(|t| t.len()))
            .collect();
        Ok(Self {
            optimizer: AdamState::for_tensors(&lens, AdamConfig::new(config.learning_rate)),
            config,
            policy,
            log_std,
            value_net,
            state_dim: spec.state_dim,
            direction_dim,
            action_low: spec.action_low.clone(),
            action_high: spec.action_high.clone(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn direction_dim(&self) -> usize {
        self.direction_dim
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    fn input(&self, state: &[f64], direction: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim, state.len())?;
        check_len("direction", self.direction_dim, direction.len())?;
        Ok(state.iter().chain(direction).copied().collect())
    }

    fn inputs(&self, states: ArrayView2<f64>, directions: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("state columns", self.state_dim, states.ncols())?;
        check_len("direction columns", self.direction_dim, directions.ncols())?;
        check_len("direction rows", states.nrows(), directions.nrows())?;
        Ok(ndarray::concatenate![Axis(1), states, directions])
    }

    pub fn mean_action(&self, state: &[f64], direction: &[f64]) -> Result<Vec<f64>> {
        self.policy.forward(&self.input(state, direction)?)
    }

    /// Mean action clipped to the bounds; what evaluation executes.
    pub fn deterministic_action(&self, state: &[f64], direction: &[f64]) -> Result<Vec<f64>> {
        Ok(self.clip(self.mean_action(state, direction)?))
    }

    fn clip(&self, mut action: Vec<f64>) -> Vec<f64> {
        for (j, a) in action.iter_mut().enumerate() {
            *a = a.clamp(self.action_low[j], self.action_high[j]);
        }
        action
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        direction: &[f64],
        rng: &mut R,
    ) -> Result<ActionSample> {
        let mean = self.mean_action(state, direction)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_prob = gaussian_log_prob(&raw, &mean, &self.log_std);
        Ok(ActionSample {
            executed: self.clip(raw.clone()),
            raw,
            log_prob,
        })
    }

    pub fn log_prob(&self, state: &[f64], direction: &[f64], action: &[f64]) -> Result<f64> {
        check_len("action", self.log_std.len(), action.len())?;
        let mean = self.mean_action(state, direction)?;
        Ok(gaussian_log_prob(action, &mean, &self.log_std))
    }

    pub fn value(&self, state: &[f64], direction: &[f64]) -> Result<f64> {
        Ok(self.value_net.forward(&self.input(state, direction)?)?[0])
    }

    /// Differential entropy of the current policy (state independent).
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + LOG_SQRT_2PI).sum()
    }

    /// Mean squared error between `returns` and `V(s ‖ direction)`.
    pub fn value_loss(
        &self,
        states: ArrayView2<f64>,
        directions: ArrayView2<f64>,
        returns: &Array1<f64>,
    ) -> Result<f64> {
        check_len("returns", states.nrows(), returns.len())?;
        let v = self
            .value_net
            .forward_batch(self.inputs(states, directions)?.view())?;
        Ok((returns - &v.column(0))
            .mapv(|d| d * d)
            .mean()
            .unwrap_or(0.0))
    }

    /// Log-probabilities, values, targets and advantages for a rollout. Targets
    /// are the rewards-to-go; advantages use the current value network.
    pub fn rollout_stats(&self, rollout: &RolloutBuffer) -> Result<RolloutStats> {
        let returns = rollout.rewards_to_go(self.config.gamma);
        let mut log_probs = Vec::with_capacity(rollout.len());
        let mut values = Vec::with_capacity(rollout.len());
        for step in rollout.steps() {
            log_probs.push(self.log_prob(&step.state, &step.direction, &step.action)?);
            values.push(self.value(&step.state, &step.direction)?);
        }
        let mut advantages: Vec<f64> = returns.iter().zip(&values).map(|(r, v)| r - v).collect();
        if self.config.normalize_advantages {
            normalize_advantages(&mut advantages);
        }
        Ok(RolloutStats {
            log_probs,
            values,
            advantages,
            returns,
        })
    }

    /// One clipped gradient step on
    /// `-mean(log_prob * A) + value_coef * mean((R - V)^2) - entropy_coef * H`.
    pub fn policy_update(&mut self, rollout: &RolloutBuffer) -> Result<UpdateStats> {
        if rollout.is_empty() {
            return Err(Error::Config("empty rollout".into()));
        }
        let steps = rollout.steps();
        let n = steps.len();
        let sd = self.state_dim;
        let dd = self.direction_dim;
        let ad = self.log_std.len();
        let mut inputs = Array2::zeros((n, sd + dd));
        let mut actions = Array2::zeros((n, ad));
        for (i, step) in steps.iter().enumerate() {
            let row = self.input(&step.state, &step.direction)?;
            inputs.row_mut(i).assign(&Array1::from(row));
            check_len("rollout action", ad, step.action.len())?;
            actions
                .row_mut(i)
                .assign(&Array1::from(step.action.clone()));
        }

        let returns = Array1::from(rollout.rewards_to_go(self.config.gamma));
        let value_cache = self.value_net.forward_cached(inputs.view())?;
        let values = value_cache.output().column(0).to_owned();
        let mut adv: Vec<f64> = (&returns - &values).to_vec();
        if self.config.normalize_advantages {
            normalize_advantages(&mut adv);
        }
        let adv = Array1::from(adv);

        let policy_cache = self.policy.forward_cached(inputs.view())?;
        let means = policy_cache.output();
        let inv_var: Vec<f64> = self.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();

        let mut policy_loss = 0.0;
        let mut mean_upstream = Array2::zeros((n, ad));
        let mut log_std_grad = vec![-self.config.entropy_coef; ad];
        for i in 0..n {
            let a = actions.row(i);
            let m = means.row(i);
            let logp = gaussian_log_prob(&a.to_vec(), &m.to_vec(), &self.log_std);
            policy_loss -= logp * adv[i] / n as f64;
            for j in 0..ad {
                let diff = a[j] - m[j];
                mean_upstream[[i, j]] = -adv[i] * diff * inv_var[j] / n as f64;
                log_std_grad[j] -= adv[i] * (diff * diff * inv_var[j] - 1.0) / n as f64;
            }
        }
        let residual = &values - &returns;
        let value_loss = residual.mapv(|d| d * d).mean().unwrap_or(0.0);
        let total = policy_loss + self.config.value_coef * value_loss
            - self.config.entropy_coef * self.entropy();
        if !total.is_finite() {
            return Err(Error::NonFinite("on-policy loss".into()));
        }
        let value_upstream =
            (residual * (2.0 * self.config.value_coef / n as f64)).insert_axis(Axis(1));

        let mut policy_grads = self
            .policy
            .backward_cached(&policy_cache, mean_upstream.view())?;
        let mut value_grads = self
            .value_net
            .backward_cached(&value_cache, value_upstream.view())?;
        let grad_norm = (policy_grads.squared_norm()
            + value_grads.squared_norm()
            + log_std_grad.iter().map(|g| g * g).sum::<f64>())
        .sqrt();
        let mut clipped_grad_norm = grad_norm;
        if grad_norm > self.config.max_grad_norm {
            let factor = self.config.max_grad_norm / (grad_norm + 1e-6);
            policy_grads.scale(factor);
            value_grads.scale(factor);
            log_std_grad.iter_mut().for_each(|g| *g *= factor);
            clipped_grad_norm = grad_norm * factor;
        }

        let params: Vec<&mut [f64]> = self
            .policy
            .tensors_mut()
            .into_iter()
            .chain([self.log_std.as_mut_slice()])
            .chain(self.value_net.tensors_mut())
            .collect();
        let grads: Vec<&[f64]> = policy_grads
            .tensors()
            .into_iter()
            .chain([log_std_grad.as_slice()])
            .chain(value_grads.tensors())
            .collect();
        self.optimizer.step(params, grads)?;
        for ls in &mut self.log_std {
            *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(UpdateStats {
            policy_loss,
            value_loss,
            grad_norm,
            clipped_grad_norm,
        })
    }
}

/// Rescales to zero mean and unit variance; left alone when the spread is
/// numerically zero.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 1e-12 {
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::RolloutStep;
    use crate::env::{make_env, EnvName};
    use crate::nn::{finite_diff_gradient, gradients_agree};
    use crate::rng::seeded_rng;
    use ndarray::array;

    fn agent(config: OnPolicyConfig, seed: u64) -> OnPolicyAgent {
        let env = make_env(EnvName::PointmassDense, 0);
        OnPolicyAgent::new(config, env.spec(), 4, &mut seeded_rng(seed)).unwrap()
    }

    fn small() -> OnPolicyConfig {
        OnPolicyConfig {
            hidden: vec![8, 8],
            ..OnPolicyConfig::default()
        }
    }

    fn rollout(agent: &OnPolicyAgent, n: usize, seed: u64) -> RolloutBuffer {
        let mut rng = seeded_rng(seed);
        let mut buf = RolloutBuffer::new(n).unwrap();
        for i in 0..n {
            let state: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let direction: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
            let s = agent.sample_action(&state, &direction, &mut rng).unwrap();
            buf.push(RolloutStep {
                state,
                direction,
                action: s.raw,
                log_prob: s.log_prob,
                value: 0.0,
                reward: rng.random_range(-1.0..1.0),
                episode_end: i % 7 == 6,
            });
        }
        buf
    }

    #[test]
    fn input_dims_include_direction() {
        let a = agent(small(), 0);
        assert_eq!(a.policy.input_dim(), 8);
        assert_eq!(a.value_net.input_dim(), 8);
        assert!(a.mean_action(&[0.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn near_deterministic_sample_equals_mean() {
        let mut a = agent(small(), 1);
        a.log_std = vec![LOG_STD_MIN; 2];
        let s = [0.1, -0.2, 0.0, 0.3];
        let d = [0.0; 4];
        let mean = a.mean_action(&s, &d).unwrap();
        let sample = a.sample_action(&s, &d, &mut seeded_rng(2)).unwrap();
        for (x, m) in sample.raw.iter().zip(&mean) {
            assert!((x - m).abs() < 1e-7);
        }
    }

    #[test]
    fn sample_mean_concentrates() {
        let a = agent(small(), 2);
        let s = [0.4, 0.1, -0.3, 0.2];
        let d = [0.05, 0.0, -0.05, 0.0];
        let mean = a.mean_action(&s, &d).unwrap();
        let n = 100_000;
        let mut rng = seeded_rng(3);
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = a.sample_action(&s, &d, &mut rng).unwrap().raw;
            sum[0] += x[0];
            sum[1] += x[1];
        }
        // sigma = exp(0) = 1
        for j in 0..2 {
            assert!((sum[j] / n as f64 - mean[j]).abs() < 3.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let lp = gaussian_log_prob(&[1.0], &[0.0], &[0.0]);
        assert!((lp - (-0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    #[test]
    fn value_loss_cases() {
        let mut a = agent(small(), 3);
        let last = a.value_net.weights().len() - 1;
        a.value_net.weights_mut()[last].fill(0.0);
        a.value_net.biases_mut()[last][0] = 0.5;
        let s = Array2::zeros((1, 4));
        let d = Array2::zeros((1, 4));
        assert!((a.value_loss(s.view(), d.view(), &array![2.0]).unwrap() - 2.25).abs() < 1e-12);
        assert_eq!(a.value_loss(s.view(), d.view(), &array![0.5]).unwrap(), 0.0);
    }

    #[test]
    fn value_loss_gradient_matches_finite_differences() {
        let a = agent(small(), 4);
        let mut rng = seeded_rng(5);
        let s = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let d = Array2::from_shape_fn((6, 4), |_| rng.random_range(-0.1..0.1));
        let r = Array1::from_shape_fn(6, |i| i as f64 * 0.3 - 1.0);
        let x = ndarray::concatenate![Axis(1), s, d];
        let cache = a.value_net.forward_cached(x.view()).unwrap();
        let upstream = ((&cache.output().column(0) - &r) * (2.0 / 6.0)).insert_axis(Axis(1));
        let analytic = a
            .value_net
            .backward_cached(&cache, upstream.view())
            .unwrap()
            .tensors()
            .concat();
        let numeric = finite_diff_gradient(
            |flat| {
                let mut probe = a.clone();
                probe.value_net.set_flat_params(flat).unwrap();
                probe.value_loss(s.view(), d.view(), &r).unwrap()
            },
            &a.value_net.flat_params(),
            1e-5,
        );
        for (x, n) in analytic.iter().zip(&numeric) {
            assert!(gradients_agree(*x, *n, 1e-4, 1e-6), "{x} vs {n}");
        }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let mut a = agent(
            OnPolicyConfig {
                normalize_advantages: false,
                ..small()
            },
            6,
        );
        let buf = rollout(&a, 8, 1);
        let last = a.value_net.weights().len() - 1;
        a.value_net.weights_mut()[last].fill(0.0);
        a.value_net.biases_mut()[last][0] = 0.25;
        // every step ends its own episode, so each target is its reward
        let mut flat = RolloutBuffer::new(8).unwrap();
        for step in buf.steps() {
            flat.push(RolloutStep {
                reward: 0.25,
                episode_end: true,
                ..step.clone()
            });
        }
        let policy_before = a.policy.clone();
        let log_std_before = a.log_std.clone();
        a.policy_update(&flat).unwrap();
        assert_eq!(a.policy, policy_before);
        assert_eq!(a.log_std, log_std_before);
    }

    #[test]
    fn positive_advantage_raises_log_prob() {
        let mut a = agent(
            OnPolicyConfig {
                normalize_advantages: false,
                ..small()
            },
            7,
        );
        let last = a.value_net.weights().len() - 1;
        a.value_net.weights_mut()[last].fill(0.0);
        a.value_net.biases_mut()[last].fill(0.0);
        let state = vec![0.2, 0.1, -0.4, 0.3];
        let direction = vec![0.0, 0.05, 0.0, -0.05];
        let action = vec![0.7, -0.4];
        let before = a.log_prob(&state, &direction, &action).unwrap();
        let mut buf = RolloutBuffer::new(1).unwrap();
        buf.push(RolloutStep {
            state: state.clone(),
            direction: direction.clone(),
            action: action.clone(),
            log_prob: before,
            value: 0.0,
            reward: 1.0,
            episode_end: true,
        });
        a.policy_update(&buf).unwrap();
        assert!(a.log_prob(&state, &direction, &action).unwrap() > before);
    }

    #[test]
    fn clipped_norm_respects_limit() {
        let mut a = agent(small(), 8);
        let buf = rollout(&a, 32, 2);
        let stats = a.policy_update(&buf).unwrap();
        assert!(stats.clipped_grad_norm <= 0.5 + 1e-12);
        assert!(stats.grad_norm >= stats.clipped_grad_norm);
    }

    #[test]
    fn log_std_stays_clamped() {
        let mut a = agent(
            OnPolicyConfig {
                learning_rate: 5.0,
                max_grad_norm: 1e6,
                ..small()
            },
            9,
        );
        for seed in 0..20 {
            let buf = rollout(&a, 32, seed);
            a.policy_update(&buf).unwrap();
            assert!(a
                .log_std
                .iter()
                .all(|ls| (LOG_STD_MIN..=LOG_STD_MAX).contains(ls)));
        }
    }

    #[test]
    fn normalization_keeps_signs() {
        let mut adv = vec![3.0, -1.0, 0.5, 2.0];
        let signs: Vec<bool> = adv.iter().map(|a| *a > 1.125).collect();
        normalize_advantages(&mut adv);
        assert_eq!(signs, adv.iter().map(|a| *a > 0.0).collect::<Vec<_>>());
        let mean: f64 = adv.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let mut constant = vec![2.0; 5];
        normalize_advantages(&mut constant);
        assert_eq!(constant, vec![2.0; 5]);
    }

    #[test]
    fn stats_targets_are_rewards_to_go() {
        let a = agent(small(), 10);
        let buf = rollout(&a, 16, 3);
        let stats = a.rollout_stats(&buf).unwrap();
        assert_eq!(stats.returns, buf.rewards_to_go(0.99));
        assert_eq!(stats.log_probs.len(), 16);
    }
}
