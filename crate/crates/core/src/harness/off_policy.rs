use ndarray::Array2;

use super::{
    divergence, evaluate, AgentConfig, DivergenceRecord, EvalRecord, Exploration, ScheduleLog,
    SeedRun, Snapshot,
};
use crate::agent_off::OffPolicyAgent;
use crate::buffer::{Batch, ReplayBuffer, Transition, TransitionRecord};
use crate::discover::OffPolicyExplorer;
use crate::env::Env;
use crate::error::Result;
use crate::explore::{gaussian_perturb, greedy, smoothing_noise};
use crate::rng::{stream_rng, stream_seed, Stream, StreamRng};

struct Streams {
    warmup: StreamRng,
    noise: StreamRng,
    smoothing: StreamRng,
    buffer: StreamRng,
}

struct Learner {
    config: AgentConfig,
    seed: u64,
    agent: OffPolicyAgent,
    explorer: Option<OffPolicyExplorer>,
    buffer: ReplayBuffer,
    streams: Streams,
    schedule: ScheduleLog,
}

impl Learner {
    fn act(
        &mut self,
        step: u64,
        state: &[f64],
        spec_sample: impl FnOnce(&mut StreamRng) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let normalized = self.agent.normalize(state);
        if step <= self.config.warmup_steps {
            let action = spec_sample(&mut self.streams.warmup);
            let executed = match (&self.explorer, self.config.perturb_warmup) {
                (Some(explorer), true) => explorer.perturb_action(&normalized, &action)?,
                _ => action.clone(),
            };
            return Ok((action, executed));
        }
        let action = self.agent.select_action_normalized(&normalized)?;
        let executed = match self.config.exploration {
            Exploration::Discover => self
                .explorer
                .as_ref()
                .expect("discover runs own an explorer")
                .perturb_action(&normalized, &action)?,
            Exploration::Gaussian => {
                let (low, high) = self.agent.action_bounds();
                gaussian_perturb(
                    &action,
                    &self.config.gaussian(),
                    low,
                    high,
                    &mut self.streams.noise,
                )
            }
            Exploration::Greedy => greedy(&action),
        };
        Ok((action, executed))
    }

    /// Next actions inside the TD target.
    fn next_actions(&mut self, next_states: &Array2<f64>) -> Result<Array2<f64>> {
        let target = self.agent.target_actions(next_states.view())?;
        if let Some(explorer) = &self.explorer {
            return explorer.perturb_target_actions(next_states.view(), target.view());
        }
        let cfg = &self.agent.config;
        if self.config.exploration != Exploration::Gaussian || cfg.smoothing_std <= 0.0 {
            return Ok(target);
        }
        let (low, high) = self.agent.action_bounds();
        let (std, clip) = (cfg.smoothing_std, cfg.smoothing_clip);
        let mut smoothed = target;
        for mut row in smoothed.rows_mut() {
            for (j, a) in row.iter_mut().enumerate() {
                let scale = high[j];
                let eps = smoothing_noise(std * scale, clip * scale, &mut self.streams.smoothing);
                *a = (*a + eps).clamp(low[j], high[j]);
            }
        }
        Ok(smoothed)
    }

    fn train_step(&mut self, step: u64) -> Result<()> {
        let batch = {
            let sampled = self
                .buffer
                .sample(self.agent.config.batch_size, &mut self.streams.buffer)?;
            Batch::from_transitions(&sampled)
        };
        let states = self.agent.normalize_rows(&batch.states);
        let next_states = self.agent.normalize_rows(&batch.next_states);
        let next_actions = self.next_actions(&next_states)?;
        let targets = self.agent.td_targets(
            &batch.rewards,
            &batch.dones,
            next_states.view(),
            next_actions.view(),
        )?;
        self.agent
            .update_critics(states.view(), batch.executed_actions.view(), &targets)?;
        self.schedule.critic_updates += 1;

        let actor_step = self
            .schedule
            .critic_updates
            .is_multiple_of(self.agent.config.actor_update_period);
        if actor_step {
            self.agent.update_actor(states.view())?;
            self.schedule.actor_updates += 1;
            self.schedule.actor_update_steps.push(step);
        }
        if let Some(explorer) = &mut self.explorer {
            if actor_step || explorer.ablations.no_delayed_updates {
                explorer.update(
                    &self.agent.actor,
                    &self.agent.critics[0],
                    states.view(),
                    &targets,
                )?;
                self.schedule.explorer_updates += 1;
                self.schedule.explorer_update_steps.push(step);
            }
        }
        if actor_step {
            self.agent.update_targets()?;
            self.schedule.target_updates += 1;
            if let Some(explorer) = &mut self.explorer {
                explorer.sync_target(self.agent.config.tau)?;
                self.schedule.target_explorer_updates += 1;
                self.schedule.target_explorer_steps.push(step);
            }
        }
        Ok(())
    }

    fn evaluate(&self, step: u64) -> Result<EvalRecord> {
        let returns = evaluate(
            &self.agent,
            self.config.env,
            self.config.max_episode_steps,
            self.config.eval_episodes,
            self.seed + self.config.eval_seed_offset,
        )?;
        Ok(EvalRecord::from_returns(step, self.seed, returns))
    }
}

pub(super) fn train(config: &AgentConfig, seed: u64) -> Result<SeedRun> {
    let agent_config = config.off_policy_config()?;
    let mut env = Env::new(
        config.env,
        stream_seed(seed, Stream::Env),
        config.max_episode_steps,
    );
    let spec = env.spec().clone();
    let agent = OffPolicyAgent::new(agent_config, &spec, &mut stream_rng(seed, Stream::Init))?;
    let explorer = match config.exploration {
        Exploration::Discover => Some(OffPolicyExplorer::new(
            &config.explorer_spec()?,
            &config.actor_spec()?,
            config.lambda_value(),
            config.ablations(),
            &spec,
            &mut stream_rng(seed, Stream::ExplorerInit),
        )?),
        _ => None,
    };
    let mut learner = Learner {
        config: config.clone(),
        seed,
        agent,
        explorer,
        buffer: ReplayBuffer::new(config.buffer_capacity, spec.state_dim, spec.action_dim)?,
        streams: Streams {
            warmup: stream_rng(seed, Stream::Warmup),
            noise: stream_rng(seed, Stream::PolicyNoise),
            smoothing: stream_rng(seed, Stream::Smoothing),
            buffer: stream_rng(seed, Stream::Buffer),
        },
        schedule: ScheduleLog::default(),
    };

    let mut evals = vec![learner.evaluate(0)?];
    let mut executed_actions = Vec::with_capacity(config.total_steps as usize);
    let mut transitions = Vec::new();
    let mut divergence_record: Option<DivergenceRecord> = None;
    let mut state = env.reset();

    for step in 1..=config.total_steps {
        learner.agent.observe(&state);
        let (action, executed) = learner.act(step, &state, |rng| spec.sample_action(rng))?;
        let outcome = env.step(&executed)?;
        let transition = Transition {
            state: state.clone(),
            action,
            executed_action: executed.clone(),
            reward: outcome.reward,
            next_state: outcome.next_state.clone(),
            done: outcome.done,
        };
        if config.record_transitions {
            transitions.push(TransitionRecord::new(step, &transition));
        }
        learner.buffer.push(transition)?;
        executed_actions.push(executed);
        state = if outcome.done || outcome.truncated {
            env.reset()
        } else {
            outcome.next_state
        };

        if step > config.warmup_steps {
            if let Err(err) = learner.train_step(step) {
                divergence_record = Some(divergence(err, step, seed)?);
                break;
            }
        }
        if step % config.eval_interval == 0 {
            evals.push(learner.evaluate(step)?);
        }
    }

    Ok(SeedRun {
        seed,
        evals,
        schedule: learner.schedule,
        executed_actions,
        transitions,
        snapshot: Snapshot::OffPolicy {
            agent: learner.agent,
            explorer: learner.explorer,
        },
        divergence: divergence_record,
    })
}
