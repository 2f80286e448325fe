//! Dense feedforward networks with ReLU hidden layers, reverse-mode gradients
//! and an Adam optimizer over flat parameter vectors.
//!
//! Batched passes keep one sample per column: an input batch is `in × B`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{first_non_finite, from_rows, to_rows, Matrix, Vector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Vector,
}

/// `h_i = σ(W_i h_{i-1} + b_i)` with ReLU on hidden layers and identity on
/// the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingNetwork {
    layers: Vec<DenseLayer>,
}

/// Layer inputs and pre-activations recorded by [`LiftingNetwork::forward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

/// Gradient with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl LiftingNetwork {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.nrows() {
                return Err(Error::shape(
                    format!("layer {i} bias"),
                    layer.weights.nrows(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layer.weights.ncols() != layers[i - 1].weights.nrows() {
                return Err(Error::shape(
                    format!("layer {i} input"),
                    layers[i - 1].weights.nrows(),
                    layer.weights.ncols(),
                ));
            }
            if first_non_finite(layer.weights.as_slice()).is_some() || first_non_finite(layer.bias.as_slice()).is_some()
            {
                return Err(Error::Config(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// All-zero network with the given layer sizes (input first).
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::build(layer_sizes, |_, _| 0.0)
    }

    /// He-uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn he_uniform(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::build(layer_sizes, |fan_in, _| {
            let limit = (6.0 / fan_in as f64).sqrt();
            rng.random_range(-limit..limit)
        })
    }

    fn build(layer_sizes: &[usize], mut init: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "invalid layer sizes {layer_sizes:?}: need ≥ 2 positive entries"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                // Row-major fill keeps initialization independent of storage order.
                let mut weights = Matrix::zeros(fan_out, fan_in);
                for i in 0..fan_out {
                    for j in 0..fan_in {
                        weights[(i, j)] = init(fan_in, fan_out);
                    }
                }
                DenseLayer {
                    weights,
                    bias: Vector::zeros(fan_out),
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    pub fn forward(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), v.len()));
        }
        let last = self.layers.len() - 1;
        let mut h = v.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = &layer.weights * &h + &layer.bias;
            if i < last {
                h.apply(|a| *a = a.max(0.0));
            }
        }
        Ok(h)
    }

    /// Forward pass over a batch (`in × B`), keeping what `backward` needs.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.nrows() != self.input_dim() {
            return Err(Error::shape("network batch input", self.input_dim(), x.nrows()));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = &layer.weights * &h;
            for mut col in pre.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(h);
            h = if i < last { pre.map(|a| a.max(0.0)) } else { pre.clone() };
            pre_activations.push(pre);
        }
        Ok((
            h,
            ForwardCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Reverse-mode pass. `upstream` is `∂L/∂output` (`out × B`); returns the
    /// parameter gradient and `∂L/∂input` (`in × B`). The ReLU derivative at
    /// zero is taken as zero.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(NetworkGradient, Matrix)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "forward cache has {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let batch = cache.inputs[0].ncols();
        for (i, layer) in self.layers.iter().enumerate() {
            if cache.inputs[i].nrows() != layer.weights.ncols()
                || cache.pre_activations[i].nrows() != layer.weights.nrows()
                || cache.inputs[i].ncols() != batch
            {
                return Err(Error::Usage(format!(
                    "forward cache does not match layer {i} of this network"
                )));
            }
        }
        if upstream.nrows() != self.output_dim() || upstream.ncols() != batch {
            return Err(Error::shape(
                "network upstream gradient",
                format!("{}x{batch}", self.output_dim()),
                format!("{}x{}", upstream.nrows(), upstream.ncols()),
            ));
        }

        let n_layers = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n_layers];
        let mut biases = vec![Vector::zeros(0); n_layers];
        let mut grad = upstream.clone();
        for i in (0..n_layers).rev() {
            if i < n_layers - 1 {
                grad.zip_apply(&cache.pre_activations[i], |g, pre| {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            weights[i] = &grad * cache.inputs[i].transpose();
            biases[i] = grad.column_sum();
            grad = self.layers[i].weights.tr_mul(&grad);
        }
        Ok((NetworkGradient { weights, biases }, grad))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Append parameters in layout order (per layer: weights column-major, then bias).
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(layer.bias.as_slice());
        }
    }

    /// Read parameters written by [`write_params`](Self::write_params); returns
    /// the number of values consumed.
    pub fn read_params(&mut self, values: &[f64]) -> usize {
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weights.len();
            layer
                .weights
                .as_mut_slice()
                .copy_from_slice(&values[offset..offset + w]);
            offset += w;
            let b = layer.bias.len();
            layer.bias.as_mut_slice().copy_from_slice(&values[offset..offset + b]);
            offset += b;
        }
        offset
    }

    /// Register this network's parameter segments; weights are regularized,
    /// biases are not.
    pub fn extend_layout(&self, prefix: &str, layout: &mut ParamLayout) {
        for (i, layer) in self.layers.iter().enumerate() {
            layout.push(format!("{prefix}.W{i}"), layer.weights.len(), true);
            layout.push(format!("{prefix}.b{i}"), layer.bias.len(), false);
        }
    }

    pub(crate) fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            layer_sizes: self.layer_sizes(),
            weights: self.layers.iter().map(|l| to_rows(&l.weights)).collect(),
            biases: self.layers.iter().map(|l| l.bias.as_slice().to_vec()).collect(),
        }
    }

    pub(crate) fn from_spec(spec: &NetworkSpec, what: &str) -> Result<Self> {
        let sizes = &spec.layer_sizes;
        if sizes.len() < 2 || spec.weights.len() != sizes.len() - 1 || spec.biases.len() != sizes.len() - 1 {
            return Err(Error::ModelFormat(format!("{what}: inconsistent layer count")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weights = from_rows(&spec.weights[i], w[1], w[0], &format!("{what} W{i}"))?;
                if spec.biases[i].len() != w[1] {
                    return Err(Error::shape(format!("{what} b{i}"), w[1], spec.biases[i].len()));
                }
                Ok(DenseLayer {
                    weights,
                    bias: Vector::from_column_slice(&spec.biases[i]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}

impl NetworkGradient {
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| *v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|v| *v == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

/// Named segments of a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    segments: Vec<ParamSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSegment {
    pub name: String,
    pub range: Range<usize>,
    pub regularized: bool,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, len: usize, regularized: bool) {
        let start = self.len();
        self.segments.push(ParamSegment {
            name: name.into(),
            range: start..start + len,
            regularized,
        });
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.range.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn segment_of(&self, index: usize) -> Option<&ParamSegment> {
        self.segments.iter().find(|s| s.range.contains(&index))
    }

    /// `coef · Σ θ²` over regularized segments; adds its gradient to `grad`.
    pub fn l2_penalty(&self, params: &[f64], coef: f64, grad: &mut [f64]) -> f64 {
        if coef == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for seg in self.segments.iter().filter(|s| s.regularized) {
            for i in seg.range.clone() {
                total += params[i] * params[i];
                grad[i] += 2.0 * coef * params[i];
            }
        }
        coef * total
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], layout: &ParamLayout) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::shape(
                "adam parameters/gradients",
                n,
                format!("{}/{}", params.len(), grads.len()),
            ));
        }
        if let Some(i) = first_non_finite(grads) {
            let parameter = layout
                .segment_of(i)
                .map_or_else(|| format!("#{i}"), |s| format!("{}[{}]", s.name, i - s.range.start));
            return Err(Error::Optimizer { parameter });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}
