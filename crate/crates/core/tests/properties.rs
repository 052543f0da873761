use std::collections::VecDeque;

use discover_core::agent_on::normalize_advantages;
use discover_core::buffer::{rewards_to_go, ReplayBuffer, Transition};
use discover_core::diagnostics::{
    assign_phases, kde_density, phase_sizes, scott_bandwidth, GridSpec, Phase,
};
use discover_core::discover::{Ablations, Mode, NetworkSpec, OffPolicyExplorer, OnPolicyExplorer};
use discover_core::env::{Env, EnvName};
use discover_core::explore::{gaussian_perturb, GaussianNoiseConfig};
use discover_core::harness::EvalRecord;
use discover_core::nn::{
    adam_step, soft_update, Activation, AdamConfig, AdamState, Mlp, OutputActivation,
};
use discover_core::rng::seeded_rng;
use ndarray::Array2;
use proptest::prelude::*;

fn net(layers: &[usize], activation: Activation, output: OutputActivation, seed: u64) -> Mlp {
    Mlp::init(layers, activation, output, &mut seeded_rng(seed)).unwrap()
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Relu), Just(Activation::Tanh)]
}

fn layers() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..8, 2..5)
}

fn spec(hidden: Vec<usize>) -> NetworkSpec {
    NetworkSpec {
        hidden,
        activation: Activation::Relu,
        learning_rate: 1e-3,
        update_period: 2,
    }
}

fn transition(tag: f64) -> Transition {
    Transition {
        state: vec![tag],
        action: vec![0.0],
        executed_action: vec![0.0],
        reward: tag,
        next_state: vec![tag],
        done: false,
    }
}

fn brute_force(rewards: &[f64], ends: &[bool], discount: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in t..rewards.len() {
                total += weight * rewards[k];
                weight *= discount;
                if ends[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

proptest! {
    #[test]
    fn layer_shapes_follow_sizes(sizes in layers(), act in activation(), seed in any::<u64>()) {
        let n = net(&sizes, act, OutputActivation::Identity, seed);
        for (i, (w, b)) in n.weights().iter().zip(n.biases()).enumerate() {
            prop_assert_eq!(w.dim(), (sizes[i + 1], sizes[i]));
            prop_assert_eq!(b.len(), sizes[i + 1]);
        }
        prop_assert!(n.flat_params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn forward_is_pure_and_batch_consistent(
        sizes in layers(),
        act in activation(),
        seed in any::<u64>(),
        rows in 1usize..6,
        scale in 0.1f64..20.0,
    ) {
        let n = net(&sizes, act, OutputActivation::Tanh, seed);
        let mut rng = seeded_rng(seed ^ 1);
        let x = Array2::from_shape_fn((rows, sizes[0]), |_| scale * rand::Rng::random_range(&mut rng, -1.0..1.0));
        let batch = n.forward_batch(x.view()).unwrap();
        prop_assert_eq!(&batch, &n.forward_batch(x.view()).unwrap());
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = n.forward(row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(batch.row(i)) {
                prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn scaled_tanh_output_is_bounded(
        sizes in layers(),
        seed in any::<u64>(),
        scale in 0.01f64..10.0,
        magnitude in 0.0f64..1e6,
    ) {
        let n = net(&sizes, Activation::Relu, OutputActivation::ScaledTanh { scale }, seed);
        let mut rng = seeded_rng(seed ^ 2);
        let x: Vec<f64> = (0..sizes[0]).map(|_| magnitude * rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        for y in n.forward(&x).unwrap() {
            prop_assert!(y.abs() <= scale);
        }
    }

    #[test]
    fn wrong_input_length_is_rejected(sizes in layers(), extra in 1usize..4) {
        let n = net(&sizes, Activation::Tanh, OutputActivation::Identity, 0);
        prop_assert!(n.forward(&vec![0.0; sizes[0] + extra]).is_err());
    }

    #[test]
    fn soft_update_is_a_convex_combination(sizes in layers(), seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let source = net(&sizes, Activation::Relu, OutputActivation::Identity, seed);
        let original = net(&sizes, Activation::Relu, OutputActivation::Identity, seed ^ 3);
        let mut target = original.clone();
        soft_update(&mut target, &source, tau).unwrap();
        for ((t, o), s) in target.flat_params().iter().zip(original.flat_params()).zip(source.flat_params()) {
            prop_assert_eq!(*t, tau * s + (1.0 - tau) * o);
            prop_assert!(*t >= o.min(s) - 1e-15 && *t <= o.max(s) + 1e-15);
        }
    }

    #[test]
    fn soft_update_endpoints(sizes in layers(), seed in any::<u64>()) {
        let source = net(&sizes, Activation::Relu, OutputActivation::Identity, seed);
        let original = net(&sizes, Activation::Relu, OutputActivation::Identity, seed ^ 4);
        let mut t0 = original.clone();
        soft_update(&mut t0, &source, 0.0).unwrap();
        prop_assert_eq!(&t0, &original);
        let mut t1 = original.clone();
        soft_update(&mut t1, &source, 1.0).unwrap();
        prop_assert_eq!(&t1, &source);
    }

    #[test]
    fn adam_moments_track_parameters(sizes in layers(), steps in 1u64..5) {
        let mut n = net(&sizes, Activation::Tanh, OutputActivation::Identity, 5);
        let mut state = AdamState::for_mlp(&n, AdamConfig::new(1e-3));
        let x = vec![0.5; sizes[0]];
        let upstream = vec![1.0; *sizes.last().unwrap()];
        for k in 1..=steps {
            let grads = n.backward(&x, &upstream).unwrap();
            adam_step(&mut n, &grads, &mut state).unwrap();
            prop_assert_eq!(state.step_count(), k);
        }
        prop_assert!(n.flat_params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn rewards_to_go_matches_brute_force(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..60),
        end_mask in prop::collection::vec(prop::bool::weighted(0.15), 60),
        discount in 0.0f64..=1.0,
    ) {
        let ends = &end_mask[..rewards.len()];
        let fast = rewards_to_go(&rewards, ends, discount);
        for (a, b) in fast.iter().zip(brute_force(&rewards, ends, discount)) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn rewards_to_go_is_linear(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        discount in 0.0f64..=1.0,
    ) {
        let ends = vec![false; pairs.len()];
        let (r1, r2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mixed: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
        let lhs = rewards_to_go(&mixed, &ends, discount);
        let g1 = rewards_to_go(&r1, &ends, discount);
        let g2 = rewards_to_go(&r2, &ends, discount);
        for i in 0..lhs.len() {
            let rhs = a * g1[i] + b * g2[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn replay_keeps_the_newest_entries(capacity in 1usize..32, pushes in 0usize..200) {
        let mut buffer = ReplayBuffer::new(capacity, 1, 1).unwrap();
        let mut reference = VecDeque::new();
        for i in 0..pushes {
            buffer.push(transition(i as f64)).unwrap();
            if reference.len() == capacity {
                reference.pop_front();
            }
            reference.push_back(i as f64);
            prop_assert_eq!(buffer.len(), (i + 1).min(capacity));
        }
        let stored: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
        prop_assert_eq!(stored, reference.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn replay_samples_come_from_storage(capacity in 1usize..32, pushes in 1usize..100, seed in any::<u64>()) {
        let mut buffer = ReplayBuffer::new(capacity, 1, 1).unwrap();
        for i in 0..pushes {
            buffer.push(transition(i as f64)).unwrap();
        }
        let oldest = pushes.saturating_sub(capacity) as f64;
        for t in buffer.sample(64, &mut seeded_rng(seed)).unwrap() {
            prop_assert!(t.reward >= oldest && t.reward < pushes as f64);
        }
    }

    #[test]
    fn executed_actions_stay_in_bounds(
        lambda in 0.0f64..=1.0,
        seed in any::<u64>(),
        state in prop::collection::vec(-50.0f64..50.0, 4),
        action in prop::collection::vec(-1.0f64..=1.0, 2),
    ) {
        let env = Env::new(EnvName::PointmassDense, 0, 200);
        let s = spec(vec![8, 8]);
        let explorer = OffPolicyExplorer::new(&s, &s, lambda, Ablations::none(), env.spec(), &mut seeded_rng(seed)).unwrap();
        let executed = explorer.perturb_action(&state, &action).unwrap();
        for (j, a) in executed.iter().enumerate() {
            prop_assert!(*a >= env.spec().action_low[j] && *a <= env.spec().action_high[j]);
        }
        let direction = explorer.directions(Array2::from_shape_vec((1, 4), state.clone()).unwrap().view()).unwrap();
        prop_assert!(direction.iter().all(|d| d.abs() <= lambda));
    }

    #[test]
    fn zero_lambda_is_neutral(
        seed in any::<u64>(),
        state in prop::collection::vec(-5.0f64..5.0, 4),
        action in prop::collection::vec(-1.0f64..=1.0, 2),
    ) {
        let env = Env::new(EnvName::PointmassDense, 0, 200);
        let s = spec(vec![8]);
        let off = OffPolicyExplorer::new(&s, &s, 0.0, Ablations::none(), env.spec(), &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(off.perturb_action(&state, &action).unwrap(), action);
        let on = OnPolicyExplorer::new(&s, &s, 0.0, 4, &mut seeded_rng(seed)).unwrap();
        prop_assert!(on.direction(&state, Mode::Train).unwrap().iter().all(|d| *d == 0.0));
    }

    #[test]
    fn eval_mode_direction_is_zero(lambda in 0.0f64..=1.0, seed in any::<u64>(), state in prop::collection::vec(-5.0f64..5.0, 3)) {
        let s = spec(vec![8]);
        let on = OnPolicyExplorer::new(&s, &s, lambda, 3, &mut seeded_rng(seed)).unwrap();
        prop_assert_eq!(on.direction(&state, Mode::Eval).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn mismatched_explorer_is_rejected(width in 1usize..64, lr in 1e-5f64..1e-1, period in 1u64..5) {
        let env = Env::new(EnvName::PointmassDense, 0, 200);
        let actor = spec(vec![32, 32]);
        let explorer = NetworkSpec { hidden: vec![width, 32], learning_rate: lr, update_period: period, ..actor.clone() };
        let mirrored = explorer == actor;
        let built = OffPolicyExplorer::new(&explorer, &actor, 0.3, Ablations::none(), env.spec(), &mut seeded_rng(0));
        prop_assert_eq!(built.is_ok(), mirrored);
    }

    #[test]
    fn gaussian_noise_stays_in_bounds(
        std in 0.0f64..5.0,
        seed in any::<u64>(),
        action in prop::collection::vec(-1.0f64..=1.0, 2),
    ) {
        let low = [-1.0, -1.0];
        let high = [1.0, 1.0];
        let out = gaussian_perturb(&action, &GaussianNoiseConfig { std }, &low, &high, &mut seeded_rng(seed));
        prop_assert!(out.iter().all(|a| (-1.0..=1.0).contains(a)));
        let again = gaussian_perturb(&action, &GaussianNoiseConfig { std }, &low, &high, &mut seeded_rng(seed));
        prop_assert_eq!(out, again);
    }

    #[test]
    fn environments_keep_states_bounded(
        seed in any::<u64>(),
        actions in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..100),
    ) {
        for name in [EnvName::PointmassDense, EnvName::PointmassSparse] {
            let mut env = Env::new(name, seed, 200);
            let mut state = env.reset();
            prop_assert!(state.iter().all(|v| v.abs() <= 1.0));
            for a in &actions {
                let step = env.step(a).unwrap();
                prop_assert!(step.reward.is_finite());
                prop_assert!(step.next_state.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
                state = if step.done || step.truncated { env.reset() } else { step.next_state };
            }
            prop_assert_eq!(state.len(), 4);
        }
    }

    #[test]
    fn pendulum_velocity_is_clamped(seed in any::<u64>(), torques in prop::collection::vec(-10.0f64..10.0, 1..300)) {
        let mut env = Env::new(EnvName::Pendulum, seed, 1000);
        env.reset();
        for t in torques {
            let step = env.step(&[t]).unwrap();
            prop_assert!(step.next_state[2].abs() <= 8.0);
            prop_assert!(step.reward.is_finite());
        }
    }

    #[test]
    fn advantages_are_standardized(values in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let mut adv = values.clone();
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let spread = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if spread > 1e-12 {
            let m = adv.iter().sum::<f64>() / n;
            let s = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
            for (a, v) in adv.iter().zip(&values) {
                prop_assert_eq!(*a > 0.0, *v > mean);
            }
        } else {
            prop_assert_eq!(adv, values);
        }
    }

    #[test]
    fn phases_partition_in_order(n in 0usize..1000) {
        let sizes = phase_sizes(n);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert!(sizes[0] <= sizes[1] && sizes[1] <= sizes[2]);
        let phases = assign_phases(n);
        prop_assert_eq!(phases.len(), n);
        prop_assert!(phases.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(phases.iter().filter(|p| **p == Phase::Late).count(), sizes[2]);
    }

    #[test]
    fn kde_integrates_to_one(
        coords in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..80),
        nx in 5usize..60,
        ny in 5usize..60,
    ) {
        let points = Array2::from_shape_fn((coords.len(), 2), |(i, j)| if j == 0 { coords[i].0 } else { coords[i].1 });
        let bandwidth = scott_bandwidth(points.view()).unwrap();
        let grid = GridSpec::around(points.view(), 1.0, nx, ny);
        let density = kde_density(points.view(), bandwidth, &grid, None).unwrap();
        prop_assert!((density.integral() - 1.0).abs() < 1e-6);
        prop_assert!(density.density.iter().all(|d| *d >= 0.0));
    }

    #[test]
    fn eval_record_statistics(returns in prop::collection::vec(-500.0f64..500.0, 1..20)) {
        let record = EvalRecord::from_returns(1000, 3, returns.clone());
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert_eq!(record.returns.len(), returns.len());
        prop_assert!((record.mean - mean).abs() < 1e-9);
        prop_assert!((record.std - std).abs() < 1e-9);
    }
}
