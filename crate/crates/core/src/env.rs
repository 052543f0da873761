//! Built-in continuous-control environments.
//!
//! * `pointmass_dense` / `pointmass_sparse`: a 2-D point mass with velocity
//!   control toward a fixed goal at (0.8, 0.8).
//! * `pendulum`: torque-limited pendulum swing-up, upright at angle 0.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::StreamRng;

pub const DEFAULT_MAX_EPISODE_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    PointmassDense,
    PointmassSparse,
    Pendulum,
}

impl EnvName {
    pub const ALL: [EnvName; 3] = [
        EnvName::PointmassDense,
        EnvName::PointmassSparse,
        EnvName::Pendulum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::PointmassDense => "pointmass_dense",
            EnvName::PointmassSparse => "pointmass_sparse",
            EnvName::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownEnv {
                name: s.to_string(),
                valid: EnvName::ALL.map(EnvName::as_str).join(", "),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    /// Half-width of the action box per component.
    pub fn action_half_range(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True termination (goal reached).
    pub done: bool,
    /// Episode cut by the step limit.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointMassReward {
    Dense,
    Sparse,
}

#[derive(Clone, Debug)]
pub struct PointMass {
    reward: PointMassReward,
    position: [f64; 2],
    velocity: [f64; 2],
}

impl PointMass {
    pub const DT: f64 = 0.05;
    pub const GOAL: [f64; 2] = [0.8, 0.8];
    pub const GOAL_RADIUS: f64 = 0.1;

    pub fn new(reward: PointMassReward) -> Self {
        Self {
            reward,
            position: [0.0; 2],
            velocity: [0.0; 2],
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ]
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.position = [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)];
        self.velocity = [0.0; 2];
        self.observe()
    }

    /// Places the mass at an arbitrary state; used by tests and replays.
    pub fn set_state(&mut self, position: [f64; 2], velocity: [f64; 2]) {
        self.position = position;
        self.velocity = velocity;
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        for ((v, p), a) in self.velocity.iter_mut().zip(&mut self.position).zip(action) {
            *v = (*v + Self::DT * a).clamp(-1.0, 1.0);
            *p = (*p + Self::DT * *v).clamp(-1.0, 1.0);
        }
        let dist = ((self.position[0] - Self::GOAL[0]).powi(2)
            + (self.position[1] - Self::GOAL[1]).powi(2))
        .sqrt();
        let reached = dist < Self::GOAL_RADIUS;
        let reward = match self.reward {
            PointMassReward::Dense => -dist,
            PointMassReward::Sparse => {
                if reached {
                    1.0
                } else {
                    0.0
                }
            }
        };
        (self.observe(), reward, reached)
    }
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    angle: f64,
    angular_velocity: f64,
}

impl Pendulum {
    pub const DT: f64 = 0.05;
    pub const GRAVITY: f64 = 10.0;
    pub const LENGTH: f64 = 1.0;
    pub const MASS: f64 = 1.0;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new() -> Self {
        Self {
            angle: 0.0,
            angular_velocity: 0.0,
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.angle.cos(), self.angle.sin(), self.angular_velocity]
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.angle = rng.random_range(-PI..=PI);
        self.angular_velocity = rng.random_range(-1.0..=1.0);
        self.observe()
    }

    pub fn set_state(&mut self, angle: f64, angular_velocity: f64) {
        self.angle = angle;
        self.angular_velocity = angular_velocity;
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        let u = action[0];
        let (g, l, m, dt) = (Self::GRAVITY, Self::LENGTH, Self::MASS, Self::DT);
        let th = self.angle;
        let thdot = self.angular_velocity;
        let cost = angle_normalize(th).powi(2) + 0.1 * thdot * thdot + 0.001 * u * u;

        let accel = 3.0 * g / (2.0 * l) * th.sin() + 3.0 / (m * l * l) * u;
        let new_thdot = (thdot + accel * dt).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.angle = th + new_thdot * dt;
        self.angular_velocity = new_thdot;
        (self.observe(), -cost, false)
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Clone, Debug)]
enum Dynamics {
    PointMass(PointMass),
    Pendulum(Pendulum),
}

/// A seeded environment instance with episode bookkeeping.
#[derive(Clone, Debug)]
pub struct Env {
    name: EnvName,
    spec: EnvSpec,
    dynamics: Dynamics,
    rng: StreamRng,
    steps: usize,
    finished: bool,
}

pub fn make_env(name: EnvName, seed: u64) -> Env {
    Env::new(name, seed, DEFAULT_MAX_EPISODE_STEPS)
}

impl Env {
    pub fn new(name: EnvName, seed: u64, max_episode_steps: usize) -> Self {
        let (spec, dynamics) = match name {
            EnvName::PointmassDense | EnvName::PointmassSparse => {
                let reward = if name == EnvName::PointmassDense {
                    PointMassReward::Dense
                } else {
                    PointMassReward::Sparse
                };
                (
                    EnvSpec {
                        state_dim: 4,
                        action_dim: 2,
                        action_low: vec![-1.0; 2],
                        action_high: vec![1.0; 2],
                        max_episode_steps,
                    },
                    Dynamics::PointMass(PointMass::new(reward)),
                )
            }
            EnvName::Pendulum => (
                EnvSpec {
                    state_dim: 3,
                    action_dim: 1,
                    action_low: vec![-Pendulum::MAX_TORQUE],
                    action_high: vec![Pendulum::MAX_TORQUE],
                    max_episode_steps,
                },
                Dynamics::Pendulum(Pendulum::new()),
            ),
        };
        Self {
            name,
            spec,
            dynamics,
            rng: StreamRng::seed_from_u64(seed),
            steps: 0,
            // stepping before the first reset is an error
            finished: true,
        }
    }

    pub fn name(&self) -> EnvName {
        self.name
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Draws a start state from the environment's own stream.
    pub fn reset(&mut self) -> Vec<f64> {
        self.steps = 0;
        self.finished = false;
        match &mut self.dynamics {
            Dynamics::PointMass(p) => p.reset(&mut self.rng),
            Dynamics::Pendulum(p) => p.reset(&mut self.rng),
        }
    }

    /// Reseeds the environment stream, then resets.
    pub fn reset_with_seed(&mut self, seed: u64) -> Vec<f64> {
        self.rng = StreamRng::seed_from_u64(seed);
        self.reset()
    }

    /// Overrides the current physical state; used by tests and replays.
    pub fn point_mass_mut(&mut self) -> Option<&mut PointMass> {
        match &mut self.dynamics {
            Dynamics::PointMass(p) => Some(p),
            Dynamics::Pendulum(_) => None,
        }
    }

    pub fn pendulum_mut(&mut self) -> Option<&mut Pendulum> {
        match &mut self.dynamics {
            Dynamics::Pendulum(p) => Some(p),
            Dynamics::PointMass(_) => None,
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        check_len("env action", self.spec.action_dim, action.len())?;
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("action".into()));
        }
        let action = self.spec.clip_action(action);
        let (next_state, reward, done) = match &mut self.dynamics {
            Dynamics::PointMass(p) => p.step(&action),
            Dynamics::Pendulum(p) => p.step(&action),
        };
        self.steps += 1;
        let truncated = !done && self.steps >= self.spec.max_episode_steps;
        self.finished = done || truncated;
        Ok(StepResult {
            next_state,
            reward,
            done,
            truncated,
        })
    }
}
