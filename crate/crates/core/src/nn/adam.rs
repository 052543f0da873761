use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 penalty: `weight_decay * p` is added to each gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// Adam moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn for_tensors(tensor_lens: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    pub fn for_mlp(net: &Mlp, config: AdamConfig) -> Self {
        let lens: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        Self::for_tensors(&lens, config)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    /// Applies one bias-corrected Adam step. Fails without touching the
    /// parameters if any gradient entry is non-finite.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        check_len("adam tensor count", self.first_moment.len(), params.len())?;
        check_len("adam gradient count", self.first_moment.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first_moment) {
            check_len("adam parameter length", m.len(), p.len())?;
            check_len("adam gradient length", m.len(), g.len())?;
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let step_size = learning_rate / bias1;

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                let grad = g[i] + weight_decay * p[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
                let denom = (v[i] / bias2).sqrt() + epsilon;
                p[i] -= step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}

/// One Adam descent step on `net` using `grads`.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    state.step(net.tensors_mut(), grads.tensors())
}
