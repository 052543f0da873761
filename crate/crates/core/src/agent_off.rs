//! Off-policy deterministic actor-critic (DDPG and TD3 variants).
//!
//! The agent only knows how to compute targets and apply updates; which
//! next-action perturbation enters the target (target explorer, Gaussian
//! smoothing or none) is decided by the caller.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{check_len, Error, Result};
use crate::nn::{adam_step, soft_update, Activation, AdamConfig, AdamState, Mlp, OutputActivation};
use crate::normalize::ObservationFilter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffPolicyAlgo {
    Ddpg,
    Td3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffPolicyConfig {
    pub algo: OffPolicyAlgo,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// L2 coefficient on critic parameters.
    pub critic_weight_decay: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub actor_update_period: u64,
    pub normalize_observations: bool,
    /// Gaussian target smoothing, used only by the Gaussian-noise TD3 arm.
    pub smoothing_std: f64,
    pub smoothing_clip: f64,
}

impl OffPolicyConfig {
    pub fn ddpg() -> Self {
        Self {
            algo: OffPolicyAlgo::Ddpg,
            hidden: vec![400, 300],
            activation: Activation::Relu,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            critic_weight_decay: 1e-2,
            gamma: 0.99,
            tau: 1e-3,
            batch_size: 64,
            actor_update_period: 1,
            normalize_observations: true,
            smoothing_std: 0.0,
            smoothing_clip: 0.0,
        }
    }

    pub fn td3() -> Self {
        Self {
            algo: OffPolicyAlgo::Td3,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            critic_weight_decay: 0.0,
            gamma: 0.99,
            tau: 5e-3,
            batch_size: 256,
            actor_update_period: 2,
            normalize_observations: false,
            smoothing_std: 0.2,
            smoothing_clip: 0.5,
        }
    }

    pub fn for_algo(algo: OffPolicyAlgo) -> Self {
        match algo {
            OffPolicyAlgo::Ddpg => Self::ddpg(),
            OffPolicyAlgo::Td3 => Self::td3(),
        }
    }

    pub fn num_critics(&self) -> usize {
        match self.algo {
            OffPolicyAlgo::Ddpg => 1,
            OffPolicyAlgo::Td3 => 2,
        }
    }
}

/// An action-value function that can report `dQ/da`.
pub trait ActionValue {
    /// Returns `Q(s_i, a_i)` and `dQ/da` at each row.
    fn q_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)>;
}

/// Critics are plain networks over the concatenation `state ‖ action`.
impl ActionValue for Mlp {
    fn q_and_action_grad(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let input = state_action(states, actions);
        let cache = self.forward_cached(input.view())?;
        let ones = Array2::ones((states.nrows(), 1));
        let grad = self.input_gradient_cached(&cache, ones.view())?;
        let q = cache.output().column(0).to_owned();
        Ok((q, grad.slice(s![.., states.ncols()..]).to_owned()))
    }
}

pub fn state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate![Axis(1), states, actions]
}

/// Critic values at `(s_i, a_i)`.
pub fn critic_values(
    critic: &Mlp,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let out = critic.forward_batch(state_action(states, actions).view())?;
    Ok(out.column(0).to_owned())
}

/// One deterministic-policy-gradient ascent step on mean `Q(s, actor(s))`.
/// Returns the objective before the step; the critic is only read.
pub fn dpg_actor_step<Q: ActionValue + ?Sized>(
    actor: &mut Mlp,
    optimizer: &mut AdamState,
    critic: &Q,
    states: ArrayView2<f64>,
) -> Result<f64> {
    let n = states.nrows() as f64;
    let cache = actor.forward_cached(states)?;
    let (q, dq_da) = critic.q_and_action_grad(states, cache.output().view())?;
    let objective = q.mean().unwrap_or(0.0);
    if !objective.is_finite() {
        return Err(Error::NonFinite("actor objective".into()));
    }
    // descend on -mean Q
    let upstream = dq_da.mapv(|g| -g / n);
    let grads = actor.backward_cached(&cache, upstream.view())?;
    adam_step(actor, &grads, optimizer)?;
    Ok(objective)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OffPolicyAgent {
    pub config: OffPolicyConfig,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critics: Vec<Mlp>,
    pub critic_targets: Vec<Mlp>,
    actor_opt: AdamState,
    critic_opts: Vec<AdamState>,
    observations: ObservationFilter,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

impl OffPolicyAgent {
    pub fn new<R: Rng + ?Sized>(
        config: OffPolicyConfig,
        spec: &EnvSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let max_action = symmetric_bound(spec)?;
        let sd = spec.state_dim;
        let ad = spec.action_dim;
        let actor_layers: Vec<usize> = [sd]
            .into_iter()
            .chain(config.hidden.iter().copied())
            .chain([ad])
            .collect();
        let critic_layers: Vec<usize> = [sd + ad]
            .into_iter()
            .chain(config.hidden.iter().copied())
            .chain([1])
            .collect();

        let actor = Mlp::init(
            &actor_layers,
            config.activation,
            OutputActivation::ScaledTanh { scale: max_action },
            rng,
        )?;
        let critics = (0..config.num_critics())
            .map(|_| {
                Mlp::init(
                    &critic_layers,
                    config.activation,
                    OutputActivation::Identity,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let actor_opt = AdamState::for_mlp(&actor, AdamConfig::new(config.actor_lr));
        let critic_cfg =
            AdamConfig::new(config.critic_lr).with_weight_decay(config.critic_weight_decay);
        let critic_opts = critics
            .iter()
            .map(|c| AdamState::for_mlp(c, critic_cfg))
            .collect();

        Ok(Self {
            observations: ObservationFilter::new(config.normalize_observations, sd),
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            action_low: spec.action_low.clone(),
            action_high: spec.action_high.clone(),
            config,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn action_bounds(&self) -> (&[f64], &[f64]) {
        (&self.action_low, &self.action_high)
    }

    pub fn observations(&self) -> &ObservationFilter {
        &self.observations
    }

    /// Feeds a freshly collected observation into the running normalizer.
    pub fn observe(&mut self, raw_state: &[f64]) {
        self.observations.update(raw_state);
    }

    pub fn normalize(&self, raw_state: &[f64]) -> Vec<f64> {
        self.observations.apply(raw_state)
    }

    pub fn normalize_rows(&self, raw_states: &Array2<f64>) -> Array2<f64> {
        self.observations.apply_rows(raw_states)
    }

    /// Deterministic policy action for a raw (unnormalized) state.
    pub fn select_action(&self, raw_state: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(&self.normalize(raw_state))
    }

    pub fn select_action_normalized(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(state)
    }

    /// `actor_target(s')` for normalized next states.
    pub fn target_actions(&self, next_states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.actor_target.forward_batch(next_states)
    }

    /// `y = r + (1 - done) * gamma * min_k Q'_k(s', a')`, no gradient.
    pub fn td_targets(
        &self,
        rewards: &Array1<f64>,
        dones: &Array1<f64>,
        next_states: ArrayView2<f64>,
        next_actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        check_len("td_targets rewards", next_states.nrows(), rewards.len())?;
        check_len("td_targets dones", next_states.nrows(), dones.len())?;
        let mut next_q: Option<Array1<f64>> = None;
        for target in &self.critic_targets {
            let q = critic_values(target, next_states, next_actions)?;
            next_q = Some(match next_q {
                None => q,
                Some(prev) => ndarray::Zip::from(&prev)
                    .and(&q)
                    .map_collect(|a, b| a.min(*b)),
            });
        }
        let next_q = next_q.expect("at least one critic");
        let gamma = self.config.gamma;
        Ok(ndarray::Zip::from(rewards)
            .and(dones)
            .and(&next_q)
            .map_collect(|r, d, q| r + (1.0 - d) * gamma * q))
    }

    /// One Adam step per critic on the mean squared error to `targets`.
    /// Returns the summed pre-update loss.
    pub fn update_critics(
        &mut self,
        states: ArrayView2<f64>,
        executed_actions: ArrayView2<f64>,
        targets: &Array1<f64>,
    ) -> Result<f64> {
        check_len("update_critics targets", states.nrows(), targets.len())?;
        let n = states.nrows() as f64;
        let input = state_action(states, executed_actions);
        let mut total = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let cache = critic.forward_cached(input.view())?;
            let q = cache.output().column(0);
            let residual = &q - targets;
            let loss = residual.mapv(|e| e * e).sum() / n;
            if !loss.is_finite() {
                return Err(Error::NonFinite("critic loss".into()));
            }
            total += loss;
            let upstream = residual.mapv(|e| 2.0 * e / n).insert_axis(Axis(1));
            let grads = critic.backward_cached(&cache, upstream.view())?;
            adam_step(critic, &grads, opt)?;
        }
        Ok(total)
    }

    /// DPG ascent on mean `Q_1(s, actor(s))`; critics are untouched.
    pub fn update_actor(&mut self, states: ArrayView2<f64>) -> Result<f64> {
        dpg_actor_step(
            &mut self.actor,
            &mut self.actor_opt,
            &self.critics[0],
            states,
        )
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        soft_update(&mut self.actor_target, &self.actor, tau)?;
        for (target, critic) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(target, critic, tau)?;
        }
        Ok(())
    }

    /// First critic at `(s_i, a_i)` for normalized states.
    pub fn q1(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        critic_values(&self.critics[0], states, actions)
    }
}

/// Actor and explorer outputs use a symmetric box; asymmetric bounds are
/// rejected.
pub(crate) fn symmetric_bound(spec: &EnvSpec) -> Result<f64> {
    let max = spec.action_high.first().copied().unwrap_or(1.0);
    let symmetric = spec
        .action_low
        .iter()
        .zip(&spec.action_high)
        .all(|(lo, hi)| *hi == max && *lo == -max);
    if symmetric && max > 0.0 {
        Ok(max)
    } else {
        Err(Error::Config(format!(
            "action bounds must be a symmetric box, got low {:?} high {:?}",
            spec.action_low, spec.action_high
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, EnvName};
    use crate::nn::{finite_diff_gradient, gradients_agree};
    use crate::rng::seeded_rng;
    use ndarray::array;

    fn small_td3() -> OffPolicyConfig {
        OffPolicyConfig {
            hidden: vec![16, 16],
            ..OffPolicyConfig::td3()
        }
    }

    fn agent(config: OffPolicyConfig, seed: u64) -> OffPolicyAgent {
        let env = make_env(EnvName::PointmassDense, 0);
        OffPolicyAgent::new(config, env.spec(), &mut seeded_rng(seed)).unwrap()
    }

    fn constant_critic(template: &Mlp, value: f64) -> Mlp {
        let mut c = template.zeroed();
        let last = c.biases().len() - 1;
        c.biases_mut()[last][0] = value;
        c
    }

    #[test]
    fn targets_start_equal() {
        let a = agent(small_td3(), 1);
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critics, a.critic_targets);
        assert_eq!(a.critics.len(), 2);
        assert_eq!(
            agent(
                OffPolicyConfig {
                    hidden: vec![8, 8],
                    ..OffPolicyConfig::ddpg()
                },
                1
            )
            .critics
            .len(),
            1
        );
    }

    #[test]
    fn zero_actor_gives_zero_action() {
        let mut a = agent(small_td3(), 2);
        a.actor = a.actor.zeroed();
        assert_eq!(
            a.select_action(&[0.3, 0.1, -0.2, 0.5]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn actions_are_deterministic_and_bounded() {
        let mut a = agent(small_td3(), 3);
        for w in a.actor.weights_mut() {
            *w *= 30.0;
        }
        let mut rng = seeded_rng(0);
        for _ in 0..100 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = a.select_action(&s).unwrap();
            assert_eq!(x, a.select_action(&s).unwrap());
            assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn td_target_cases() {
        let mut a = agent(small_td3(), 4);
        a.critic_targets[0] = constant_critic(&a.critic_targets[0], 2.0);
        a.critic_targets[1] = constant_critic(&a.critic_targets[1], 1.5);
        let s = Array2::zeros((1, 4));
        let act = Array2::zeros((1, 2));
        let y = a
            .td_targets(&array![0.5], &array![0.0], s.view(), act.view())
            .unwrap();
        assert!((y[0] - 1.985).abs() < 1e-12);

        let y = a
            .td_targets(&array![0.5], &array![1.0], s.view(), act.view())
            .unwrap();
        assert_eq!(y[0], 0.5);

        a.config.gamma = 0.0;
        let y = a
            .td_targets(&array![1.0], &array![0.0], s.view(), act.view())
            .unwrap();
        assert_eq!(y[0], 1.0);
    }

    #[test]
    fn twin_min_never_exceeds_single_critic() {
        let a = agent(small_td3(), 5);
        let mut single = a.clone();
        let mut rng = seeded_rng(1);
        let s = Array2::from_shape_fn((32, 4), |_| rng.random_range(-1.0..1.0));
        let act = Array2::from_shape_fn((32, 2), |_| rng.random_range(-1.0..1.0));
        let r = Array1::from_shape_fn(32, |_| rng.random_range(-1.0..1.0));
        let d = Array1::zeros(32);
        let twin = a.td_targets(&r, &d, s.view(), act.view()).unwrap();
        for k in 0..2 {
            single.critic_targets = vec![a.critic_targets[k].clone()];
            let y = single.td_targets(&r, &d, s.view(), act.view()).unwrap();
            assert!(twin.iter().zip(&y).all(|(t, s)| t <= s));
        }
    }

    #[test]
    fn critic_loss_zero_when_targets_match() {
        let mut a = agent(small_td3(), 6);
        let mut rng = seeded_rng(2);
        let s = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
        let act = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
        // both critics share parameters so one target vector fits both
        a.critics[1] = a.critics[0].clone();
        let y = a.q1(s.view(), act.view()).unwrap();
        let before = a.critics.clone();
        let loss = a.update_critics(s.view(), act.view(), &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(a.critics, before);
    }

    #[test]
    fn critic_loss_single_transition() {
        let mut a = agent(
            OffPolicyConfig {
                hidden: vec![4],
                ..OffPolicyConfig::ddpg()
            },
            7,
        );
        a.critics[0] = constant_critic(&a.critics[0], 0.5);
        let loss = a
            .update_critics(
                Array2::zeros((1, 4)).view(),
                Array2::zeros((1, 2)).view(),
                &array![2.0],
            )
            .unwrap();
        assert!((loss - 2.25).abs() < 1e-12);
    }

    #[test]
    fn critic_regression_converges() {
        let mut a = agent(
            OffPolicyConfig {
                hidden: vec![32, 32],
                critic_lr: 1e-3,
                ..OffPolicyConfig::td3()
            },
            8,
        );
        let mut rng = seeded_rng(3);
        let s = Array2::from_shape_fn((32, 4), |_| rng.random_range(-1.0f64..1.0));
        let act = Array2::from_shape_fn((32, 2), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(32, |i| (s[[i, 0]] + act[[i, 1]]).sin());
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            last = a.update_critics(s.view(), act.view(), &y).unwrap();
        }
        assert!(last / 2.0 < 1e-3, "loss {last}");
    }

    #[test]
    fn critic_update_rejects_non_finite() {
        let mut a = agent(small_td3(), 9);
        let err = a.update_critics(
            Array2::zeros((1, 4)).view(),
            Array2::zeros((1, 2)).view(),
            &array![f64::NAN],
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn actor_gradient_is_zero_when_critic_ignores_actions() {
        let mut a = agent(small_td3(), 10);
        let c = &mut a.critics[0];
        c.weights_mut()[0].slice_mut(s![.., 4..]).fill(0.0);
        let before = a.actor.clone();
        let mut rng = seeded_rng(4);
        let s = Array2::from_shape_fn((16, 4), |_| rng.random_range(-1.0..1.0));
        a.update_actor(s.view()).unwrap();
        assert_eq!(a.actor, before);
    }

    struct Quadratic {
        optimum: f64,
    }

    impl ActionValue for Quadratic {
        fn q_and_action_grad(
            &self,
            _s: ArrayView2<f64>,
            a: ArrayView2<f64>,
        ) -> Result<(Array1<f64>, Array2<f64>)> {
            let q = a.column(0).mapv(|x| -(x - self.optimum).powi(2));
            let g = a.mapv(|x| -2.0 * (x - self.optimum));
            Ok((q, g))
        }
    }

    #[test]
    fn actor_reaches_quadratic_optimum() {
        let mut rng = seeded_rng(11);
        let mut actor = Mlp::init(
            &[1, 8, 1],
            Activation::Relu,
            OutputActivation::ScaledTanh { scale: 1.0 },
            &mut rng,
        )
        .unwrap();
        let mut opt = AdamState::for_mlp(&actor, AdamConfig::new(1e-2));
        let s = array![[0.5]];
        for _ in 0..500 {
            dpg_actor_step(&mut actor, &mut opt, &Quadratic { optimum: 0.3 }, s.view()).unwrap();
        }
        let a = actor.forward(&[0.5]).unwrap()[0];
        assert!((a - 0.3).abs() < 0.05, "action {a}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let a = agent(small_td3(), 12);
        let mut rng = seeded_rng(5);
        let s = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let objective = |flat: &[f64]| {
            let mut actor = a.actor.clone();
            actor.set_flat_params(flat).unwrap();
            let act = actor.forward_batch(s.view()).unwrap();
            critic_values(&a.critics[0], s.view(), act.view())
                .unwrap()
                .mean()
                .unwrap()
        };
        let numeric = finite_diff_gradient(objective, &a.actor.flat_params(), 1e-5);

        let cache = a.actor.forward_cached(s.view()).unwrap();
        let (_, dq) = a.critics[0]
            .q_and_action_grad(s.view(), cache.output().view())
            .unwrap();
        let grads = a
            .actor
            .backward_cached(&cache, dq.mapv(|g| g / 6.0).view())
            .unwrap();
        let analytic: Vec<f64> = grads.tensors().concat();
        for (x, y) in analytic.iter().zip(&numeric) {
            assert!(gradients_agree(*x, *y, 1e-4, 1e-6), "{x} vs {y}");
        }
    }

    #[test]
    fn actor_update_leaves_critics_and_vice_versa() {
        let mut a = agent(small_td3(), 13);
        let mut rng = seeded_rng(6);
        let s = Array2::from_shape_fn((16, 4), |_| rng.random_range(-1.0..1.0));
        let act = Array2::from_shape_fn((16, 2), |_| rng.random_range(-1.0..1.0));
        let critics = a.critics.clone();
        a.update_actor(s.view()).unwrap();
        assert_eq!(a.critics, critics);
        let actor = a.actor.clone();
        a.update_critics(s.view(), act.view(), &Array1::ones(16))
            .unwrap();
        assert_eq!(a.actor, actor);
        assert_ne!(a.critics, critics);
    }

    #[test]
    fn target_update_rates() {
        let mut a = agent(small_td3(), 14);
        let mut rng = seeded_rng(7);
        let s = Array2::from_shape_fn((16, 4), |_| rng.random_range(-1.0..1.0));
        a.update_actor(s.view()).unwrap();
        a.update_critics(s.view(), Array2::zeros((16, 2)).view(), &Array1::ones(16))
            .unwrap();

        let old_target = a.actor_target.clone();
        a.config.tau = 0.005;
        a.update_targets().unwrap();
        let expected: Vec<f64> = a
            .actor
            .flat_params()
            .iter()
            .zip(old_target.flat_params())
            .map(|(p, t)| 0.005 * p + (1.0 - 0.005) * t)
            .collect();
        assert_eq!(a.actor_target.flat_params(), expected);

        let frozen = a.clone();
        a.config.tau = 0.0;
        a.update_targets().unwrap();
        assert_eq!(a.actor_target, frozen.actor_target);
        assert_eq!(a.critic_targets, frozen.critic_targets);

        a.config.tau = 1.0;
        a.update_targets().unwrap();
        assert_eq!(a.actor_target, a.actor);
        assert_eq!(a.critic_targets, a.critics);
    }

    #[test]
    fn ddpg_and_td3_targets_coincide_with_identical_twins() {
        let mut td3 = agent(small_td3(), 15);
        td3.critic_targets[1] = td3.critic_targets[0].clone();
        let mut ddpg = td3.clone();
        ddpg.config.algo = OffPolicyAlgo::Ddpg;
        ddpg.critic_targets.truncate(1);
        let mut rng = seeded_rng(8);
        let s = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
        let act = td3.target_actions(s.view()).unwrap();
        let r = Array1::from_shape_fn(10, |_| rng.random_range(-1.0..1.0));
        let d = Array1::zeros(10);
        assert_eq!(
            td3.td_targets(&r, &d, s.view(), act.view()).unwrap(),
            ddpg.td_targets(&r, &d, s.view(), act.view()).unwrap()
        );
    }

    #[test]
    fn asymmetric_bounds_rejected() {
        let mut spec = make_env(EnvName::Pendulum, 0).spec().clone();
        spec.action_low = vec![-1.0];
        assert!(OffPolicyAgent::new(small_td3(), &spec, &mut seeded_rng(0)).is_err());
    }
}
