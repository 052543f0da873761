use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent_off::{OffPolicyAlgo, OffPolicyConfig};
use crate::agent_on::OnPolicyConfig;
use crate::discover::{Ablations, NetworkSpec};
use crate::env::EnvName;
use crate::error::{Error, Result};
use crate::explore::GaussianNoiseConfig;
use crate::nn::Activation;

/// The lambda grid used by sweeps.
pub const LAMBDA_GRID: [f64; 6] = [0.0, 0.1, 0.3, 0.6, 0.9, 1.0];
pub const DEFAULT_EVAL_SEED_OFFSET: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ddpg,
    Td3,
    A2c,
}

impl Algo {
    pub fn is_off_policy(self) -> bool {
        matches!(self, Algo::Ddpg | Algo::Td3)
    }

    pub fn off_policy(self) -> Option<OffPolicyAlgo> {
        match self {
            Algo::Ddpg => Some(OffPolicyAlgo::Ddpg),
            Algo::Td3 => Some(OffPolicyAlgo::Td3),
            Algo::A2c => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    Discover,
    Gaussian,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoDpu,
    NoTn,
    NoTsr,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::NoDpu, Ablation::NoTn, Ablation::NoTsr];
}

macro_rules! snake_case_names {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " `{}`; valid: {}"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

snake_case_names!(Algo, "algorithm", Algo::Ddpg => "ddpg", Algo::Td3 => "td3", Algo::A2c => "a2c");
snake_case_names!(
    Exploration,
    "exploration",
    Exploration::Discover => "discover",
    Exploration::Gaussian => "gaussian",
    Exploration::Greedy => "greedy"
);
snake_case_names!(Ablation, "ablation", Ablation::NoDpu => "no_dpu", Ablation::NoTn => "no_tn", Ablation::NoTsr => "no_tsr");

/// Flat run configuration. Every `Option` left empty falls back to the
/// algorithm's default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algo: Algo,
    pub env: EnvName,
    pub exploration: Exploration,
    /// Defaults to 0.3 off-policy and 0.1 on-policy.
    pub lambda: Option<f64>,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Uniform random steps before learning starts (off-policy only).
    pub warmup_steps: u64,
    pub max_episode_steps: usize,
    pub ablation: BTreeSet<Ablation>,
    pub gaussian_std: f64,
    pub buffer_capacity: usize,
    /// Apply the explorer to warmup actions too.
    pub perturb_warmup: bool,
    /// Keep the transition log and final networks for diagnostics.
    pub record_transitions: bool,
    pub eval_seed_offset: u64,

    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub gamma: Option<f64>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub critic_weight_decay: Option<f64>,
    pub tau: Option<f64>,
    pub batch_size: Option<usize>,
    pub actor_update_period: Option<u64>,
    pub normalize_observations: Option<bool>,
    pub smoothing_std: Option<f64>,
    pub smoothing_clip: Option<f64>,

    pub learning_rate: Option<f64>,
    pub horizon: Option<usize>,
    pub value_coef: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: Option<bool>,

    pub explorer_hidden: Option<Vec<usize>>,
    pub explorer_activation: Option<Activation>,
    pub explorer_lr: Option<f64>,
    pub explorer_update_period: Option<u64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Td3,
            env: EnvName::PointmassDense,
            exploration: Exploration::Discover,
            lambda: None,
            total_steps: 30_000,
            eval_interval: 1_000,
            eval_episodes: 10,
            seeds: vec![0],
            warmup_steps: 1_000,
            max_episode_steps: 200,
            ablation: BTreeSet::new(),
            gaussian_std: GaussianNoiseConfig::default().std,
            buffer_capacity: 1_000_000,
            perturb_warmup: false,
            record_transitions: false,
            eval_seed_offset: DEFAULT_EVAL_SEED_OFFSET,
            hidden: None,
            activation: None,
            gamma: None,
            actor_lr: None,
            critic_lr: None,
            critic_weight_decay: None,
            tau: None,
            batch_size: None,
            actor_update_period: None,
            normalize_observations: None,
            smoothing_std: None,
            smoothing_clip: None,
            learning_rate: None,
            horizon: None,
            value_coef: None,
            entropy_coef: None,
            max_grad_norm: None,
            normalize_advantages: None,
            explorer_hidden: None,
            explorer_activation: None,
            explorer_lr: None,
            explorer_update_period: None,
        }
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

impl AgentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn lambda_value(&self) -> f64 {
        self.lambda
            .unwrap_or(if self.algo.is_off_policy() { 0.3 } else { 0.1 })
    }

    pub fn ablations(&self) -> Ablations {
        Ablations {
            no_delayed_updates: self.ablation.contains(&Ablation::NoDpu),
            no_target_network: self.ablation.contains(&Ablation::NoTn),
            no_target_smoothing: self.ablation.contains(&Ablation::NoTsr),
        }
    }

    pub fn gaussian(&self) -> GaussianNoiseConfig {
        GaussianNoiseConfig {
            std: self.gaussian_std,
        }
    }

    /// Off-policy hyper-parameters with overrides applied.
    pub fn off_policy_config(&self) -> Result<OffPolicyConfig> {
        let algo = self.algo.off_policy().ok_or_else(|| {
            Error::Config(format!("{} is not an off-policy algorithm", self.algo))
        })?;
        let d = OffPolicyConfig::for_algo(algo);
        Ok(OffPolicyConfig {
            algo,
            hidden: self.hidden.clone().unwrap_or(d.hidden),
            activation: self.activation.unwrap_or(d.activation),
            actor_lr: self.actor_lr.unwrap_or(d.actor_lr),
            critic_lr: self.critic_lr.unwrap_or(d.critic_lr),
            critic_weight_decay: self.critic_weight_decay.unwrap_or(d.critic_weight_decay),
            gamma: self.gamma.unwrap_or(d.gamma),
            tau: self.tau.unwrap_or(d.tau),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            actor_update_period: self.actor_update_period.unwrap_or(d.actor_update_period),
            normalize_observations: self
                .normalize_observations
                .unwrap_or(d.normalize_observations),
            smoothing_std: self.smoothing_std.unwrap_or(d.smoothing_std),
            smoothing_clip: self.smoothing_clip.unwrap_or(d.smoothing_clip),
        })
    }

    pub fn on_policy_config(&self) -> Result<OnPolicyConfig> {
        if self.algo != Algo::A2c {
            return Err(Error::Config(format!(
                "{} is not an on-policy algorithm",
                self.algo
            )));
        }
        let d = OnPolicyConfig::default();
        Ok(OnPolicyConfig {
            hidden: self.hidden.clone().unwrap_or(d.hidden),
            activation: self.activation.unwrap_or(d.activation),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            horizon: self.horizon.unwrap_or(d.horizon),
            gamma: self.gamma.unwrap_or(d.gamma),
            value_coef: self.value_coef.unwrap_or(d.value_coef),
            entropy_coef: self.entropy_coef.unwrap_or(d.entropy_coef),
            max_grad_norm: self.max_grad_norm.unwrap_or(d.max_grad_norm),
            normalize_advantages: self.normalize_advantages.unwrap_or(d.normalize_advantages),
            initial_log_std: d.initial_log_std,
        })
    }

    /// Architecture and schedule of the agent's policy network.
    pub fn actor_spec(&self) -> Result<NetworkSpec> {
        if self.algo.is_off_policy() {
            let c = self.off_policy_config()?;
            Ok(NetworkSpec {
                hidden: c.hidden,
                activation: c.activation,
                learning_rate: c.actor_lr,
                update_period: c.actor_update_period,
            })
        } else {
            let c = self.on_policy_config()?;
            Ok(NetworkSpec {
                hidden: c.hidden,
                activation: c.activation,
                learning_rate: c.learning_rate,
                update_period: 1,
            })
        }
    }

    /// The explorer copies the actor unless explicitly overridden.
    pub fn explorer_spec(&self) -> Result<NetworkSpec> {
        let actor = self.actor_spec()?;
        Ok(NetworkSpec {
            hidden: self.explorer_hidden.clone().unwrap_or(actor.hidden),
            activation: self.explorer_activation.unwrap_or(actor.activation),
            learning_rate: self.explorer_lr.unwrap_or(actor.learning_rate),
            update_period: self.explorer_update_period.unwrap_or(actor.update_period),
        })
    }

    /// Rejects inconsistent settings before any work is done.
    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda_value();
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {lambda}"
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !self.ablation.is_empty()
            && (self.exploration != Exploration::Discover || !self.algo.is_off_policy())
        {
            return Err(Error::Config(
                "ablations require exploration = discover with an off-policy algorithm".into(),
            ));
        }
        if self.algo == Algo::A2c && self.exploration == Exploration::Gaussian {
            return Err(Error::Config(
                "gaussian action noise applies to deterministic off-policy agents only".into(),
            ));
        }
        if !(self.gaussian_std.is_finite() && self.gaussian_std >= 0.0) {
            return Err(Error::Config(format!(
                "gaussian_std must be non-negative, got {}",
                self.gaussian_std
            )));
        }
        if self.algo.is_off_policy() {
            let c = self.off_policy_config()?;
            positive("actor_lr", c.actor_lr)?;
            positive("critic_lr", c.critic_lr)?;
            if !(0.0..=1.0).contains(&c.tau) {
                return Err(Error::Config(format!(
                    "tau must lie in [0, 1], got {}",
                    c.tau
                )));
            }
            if c.batch_size == 0 || c.actor_update_period == 0 || self.buffer_capacity == 0 {
                return Err(Error::Config(
                    "batch_size, actor_update_period and buffer_capacity must be positive".into(),
                ));
            }
        } else {
            let c = self.on_policy_config()?;
            positive("learning_rate", c.learning_rate)?;
            positive("max_grad_norm", c.max_grad_norm)?;
            if c.horizon == 0 {
                return Err(Error::Config("horizon must be positive".into()));
            }
        }
        if self.exploration == Exploration::Discover {
            self.explorer_spec()?.check_mirrors(&self.actor_spec()?)?;
        }
        Ok(())
    }

    /// Short label naming the exploration setting, used in summaries.
    pub fn setting_label(&self) -> String {
        match self.exploration {
            Exploration::Discover => {
                let mut label = format!("discover_lambda={}", self.lambda_value());
                for a in &self.ablation {
                    label.push('_');
                    label.push_str(a.as_str());
                }
                label
            }
            other => other.to_string(),
        }
    }
}
