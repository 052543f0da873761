use ndarray::{Array1, Array2};

use super::{
    divergence, evaluate, AgentConfig, DivergenceRecord, EvalRecord, Exploration, ScheduleLog,
    SeedRun, Snapshot,
};
use crate::agent_on::OnPolicyAgent;
use crate::buffer::{RolloutBuffer, RolloutStep, Transition, TransitionRecord};
use crate::discover::{Mode, OnPolicyExplorer};
use crate::env::Env;
use crate::error::Result;
use crate::rng::{stream_rng, stream_seed, Stream};

/// Explorer step on the frozen rollout, then one agent step.
fn update(
    agent: &mut OnPolicyAgent,
    explorer: Option<&mut OnPolicyExplorer>,
    rollout: &RolloutBuffer,
    schedule: &mut ScheduleLog,
    step: u64,
) -> Result<()> {
    if let Some(explorer) = explorer {
        let steps = rollout.steps();
        let sd = agent.state_dim();
        let states = Array2::from_shape_fn((steps.len(), sd), |(i, j)| steps[i].state[j]);
        let returns = Array1::from(rollout.rewards_to_go(agent.config.gamma));
        explorer.update(&agent.value_net, states.view(), &returns)?;
        schedule.explorer_updates += 1;
        schedule.explorer_update_steps.push(step);
    }
    agent.policy_update(rollout)?;
    schedule.policy_updates += 1;
    schedule.actor_updates += 1;
    schedule.critic_updates += 1;
    schedule.actor_update_steps.push(step);
    Ok(())
}

pub(super) fn train(config: &AgentConfig, seed: u64) -> Result<SeedRun> {
    let agent_config = config.on_policy_config()?;
    let horizon = agent_config.horizon;
    let mut env = Env::new(
        config.env,
        stream_seed(seed, Stream::Env),
        config.max_episode_steps,
    );
    let spec = env.spec().clone();
    let mut agent = OnPolicyAgent::new(
        agent_config,
        &spec,
        spec.state_dim,
        &mut stream_rng(seed, Stream::Init),
    )?;
    let mut explorer = match config.exploration {
        Exploration::Discover => Some(OnPolicyExplorer::new(
            &config.explorer_spec()?,
            &config.actor_spec()?,
            config.lambda_value(),
            spec.state_dim,
            &mut stream_rng(seed, Stream::ExplorerInit),
        )?),
        _ => None,
    };
    let mut noise = stream_rng(seed, Stream::PolicyNoise);
    let eval_seed = seed + config.eval_seed_offset;
    let eval = |agent: &OnPolicyAgent, step: u64| -> Result<EvalRecord> {
        let returns = evaluate(
            agent,
            config.env,
            config.max_episode_steps,
            config.eval_episodes,
            eval_seed,
        )?;
        Ok(EvalRecord::from_returns(step, seed, returns))
    };

    let mut schedule = ScheduleLog::default();
    let mut evals = vec![eval(&agent, 0)?];
    let mut executed_actions = Vec::with_capacity(config.total_steps as usize);
    let mut transitions = Vec::new();
    let mut divergence_record: Option<DivergenceRecord> = None;
    let mut rollout = RolloutBuffer::new(horizon)?;
    let mut state = env.reset();
    let zeros = vec![0.0; spec.state_dim];

    for step in 1..=config.total_steps {
        let direction = match &explorer {
            Some(e) => e.direction(&state, Mode::Train)?,
            None => zeros.clone(),
        };
        let sample = agent.sample_action(&state, &direction, &mut noise)?;
        let value = agent.value(&state, &direction)?;
        let outcome = env.step(&sample.executed)?;
        if config.record_transitions {
            let transition = Transition {
                state: state.clone(),
                action: sample.raw.clone(),
                executed_action: sample.executed.clone(),
                reward: outcome.reward,
                next_state: outcome.next_state.clone(),
                done: outcome.done,
            };
            transitions.push(TransitionRecord::new(step, &transition));
        }
        let episode_end = outcome.done || outcome.truncated;
        rollout.push(RolloutStep {
            state: state.clone(),
            direction,
            action: sample.raw,
            log_prob: sample.log_prob,
            value,
            reward: outcome.reward,
            episode_end,
        });
        executed_actions.push(sample.executed);
        state = if episode_end {
            env.reset()
        } else {
            outcome.next_state
        };

        if rollout.is_full() {
            if let Err(err) = update(&mut agent, explorer.as_mut(), &rollout, &mut schedule, step) {
                divergence_record = Some(divergence(err, step, seed)?);
                break;
            }
            rollout.clear();
        }
        if step % config.eval_interval == 0 {
            evals.push(eval(&agent, step)?);
        }
    }

    Ok(SeedRun {
        seed,
        evals,
        schedule,
        executed_actions,
        transitions,
        snapshot: Snapshot::OnPolicy { agent, explorer },
        divergence: divergence_record,
    })
}
