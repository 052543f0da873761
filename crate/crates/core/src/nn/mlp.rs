use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Tanh,
    ScaledTanh { scale: f64 },
}

impl OutputActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Identity => x,
            OutputActivation::Tanh => x.tanh(),
            OutputActivation::ScaledTanh { scale } => scale * x.tanh(),
        }
    }

    fn derivative(self, y: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Tanh => 1.0 - y * y,
            OutputActivation::ScaledTanh { scale } => {
                let t = y / scale;
                scale * (1.0 - t * t)
            }
        }
    }
}

/// A fully connected feed-forward network.
///
/// Layer `i` maps `layer_sizes[i]` inputs to `layer_sizes[i + 1]` outputs
/// with weight matrix of shape `(layer_sizes[i + 1], layer_sizes[i])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
}

/// Intermediate activations recorded by [`Mlp::forward_cached`], one row per
/// sample.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `layer_inputs[i]` is the input to layer `i`; the last entry is the
    /// network output.
    layer_inputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.layer_inputs
            .last()
            .expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.layer_inputs[0]
    }
}

/// Parameter gradients mirroring an [`Mlp`], plus the gradient with respect
/// to the network input (one row per sample).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp, batch: usize) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Array2::zeros(w.raw_dim()))
                .collect(),
            biases: net
                .biases
                .iter()
                .map(|b| Array1::zeros(b.raw_dim()))
                .collect(),
            input: Array2::zeros((batch, net.input_dim())),
        }
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    pub fn input_row(&self, row: usize) -> Vec<f64> {
        self.input.row(row).to_vec()
    }
}

impl Mlp {
    /// Samples weights and biases uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_layout(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
            let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        hidden_activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidLayout(format!(
                "{} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            check_len(
                "from_parts weight columns",
                *layer_sizes.last().unwrap(),
                w.ncols(),
            )?;
            check_len("from_parts bias length", w.nrows(), b.len())?;
            layer_sizes.push(w.nrows());
        }
        validate_layout(&layer_sizes)?;
        let weights = weights
            .into_iter()
            .map(|w| w.as_standard_layout().into_owned())
            .collect();
        let net = Self {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
            output_activation,
        };
        net.check_finite("from_parts")?;
        Ok(net)
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut net = self.clone();
        net.weights.iter_mut().for_each(|w| w.fill(0.0));
        net.biases.iter_mut().for_each(|b| b.fill(0.0));
        net
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| {
                [
                    w.as_slice_mut().expect("standard layout"),
                    b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// All parameters flattened in tensor order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("set_flat_params", self.num_params(), flat.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    pub(crate) fn check_finite(&self, context: &str) -> Result<()> {
        if self
            .tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
        {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{context} parameters")))
        }
    }

    /// Evaluates the network on a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("forward input", self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        let last = self.weights.len() - 1;
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = w.dot(&ndarray::aview1(&x));
            y += b;
            if layer == last {
                y.mapv_inplace(|v| self.output_activation.apply(v));
            } else {
                y.mapv_inplace(|v| self.hidden_activation.apply(v));
            }
            x = y.to_vec();
        }
        Ok(x)
    }

    /// Evaluates the network on a batch (one sample per row).
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("forward_batch input", self.input_dim(), inputs.ncols())?;
        let mut x = inputs.to_owned();
        let last = self.weights.len() - 1;
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = self.layer(&x, w, b, layer == last);
        }
        Ok(x)
    }

    /// Batch forward pass that keeps the activations needed by
    /// [`Mlp::backward_cached`].
    pub fn forward_cached(&self, inputs: ArrayView2<f64>) -> Result<ForwardCache> {
        check_len("forward_cached input", self.input_dim(), inputs.ncols())?;
        let mut layer_inputs = Vec::with_capacity(self.weights.len() + 1);
        layer_inputs.push(inputs.to_owned());
        let last = self.weights.len() - 1;
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let y = self.layer(layer_inputs.last().unwrap(), w, b, layer == last);
            layer_inputs.push(y);
        }
        Ok(ForwardCache { layer_inputs })
    }

    fn layer(
        &self,
        x: &Array2<f64>,
        w: &Array2<f64>,
        b: &Array1<f64>,
        is_output: bool,
    ) -> Array2<f64> {
        let mut y = x.dot(&w.t());
        y += b;
        if is_output {
            let act = self.output_activation;
            y.mapv_inplace(|v| act.apply(v));
        } else {
            let act = self.hidden_activation;
            y.mapv_inplace(|v| act.apply(v));
        }
        y
    }

    /// Reverse-mode pass for a batch. `upstream` holds dL/d(output) per
    /// sample; parameter gradients are summed over the batch.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<Gradients> {
        let output = cache.output();
        check_len(
            "backward upstream columns",
            self.output_dim(),
            upstream.ncols(),
        )?;
        check_len("backward upstream rows", output.nrows(), upstream.nrows())?;

        let n_layers = self.weights.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);

        let out_act = self.output_activation;
        let mut delta = upstream.to_owned();
        ndarray::Zip::from(&mut delta)
            .and(output)
            .for_each(|d, &y| *d *= out_act.derivative(y));

        for layer in (0..n_layers).rev() {
            let x = &cache.layer_inputs[layer];
            weights.push(delta.t().dot(x).as_standard_layout().into_owned());
            biases.push(delta.sum_axis(Axis(0)));
            let mut grad_x = delta.dot(&self.weights[layer]);
            if layer > 0 {
                let act = self.hidden_activation;
                ndarray::Zip::from(&mut grad_x)
                    .and(x)
                    .for_each(|g, &y| *g *= act.derivative(y));
            }
            delta = grad_x;
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients {
            weights,
            biases,
            input: delta,
        })
    }

    /// Input gradient only; skips the parameter gradients.
    pub fn input_gradient_cached(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let output = cache.output();
        check_len(
            "input gradient upstream columns",
            self.output_dim(),
            upstream.ncols(),
        )?;
        check_len(
            "input gradient upstream rows",
            output.nrows(),
            upstream.nrows(),
        )?;
        let out_act = self.output_activation;
        let mut delta = upstream.to_owned();
        ndarray::Zip::from(&mut delta)
            .and(output)
            .for_each(|d, &y| *d *= out_act.derivative(y));
        for layer in (0..self.weights.len()).rev() {
            let mut grad_x = delta.dot(&self.weights[layer]);
            if layer > 0 {
                let act = self.hidden_activation;
                ndarray::Zip::from(&mut grad_x)
                    .and(&cache.layer_inputs[layer])
                    .for_each(|g, &y| *g *= act.derivative(y));
            }
            delta = grad_x;
        }
        Ok(delta)
    }

    /// Gradients of `upstream · forward(input)` for a single input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        check_len("backward input", self.input_dim(), input.len())?;
        check_len("backward upstream", self.output_dim(), upstream.len())?;
        let x = ndarray::aview1(input).insert_axis(Axis(0));
        let cache = self.forward_cached(x)?;
        let g = ndarray::aview1(upstream).insert_axis(Axis(0));
        self.backward_cached(&cache, g)
    }
}

fn validate_layout(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidLayout(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidLayout(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// `target <- tau * source + (1 - tau) * target` for every parameter.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(source) {
        return Err(Error::InvalidLayout(format!(
            "soft update between {:?} and {:?}",
            target.layer_sizes, source.layer_sizes
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    for (t, s) in target.tensors_mut().into_iter().zip(source.tensors()) {
        for (tp, sp) in t.iter_mut().zip(s) {
            *tp = tau * sp + (1.0 - tau) * *tp;
        }
    }
    Ok(())
}
