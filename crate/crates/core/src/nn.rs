//! Parameter storage and the handful of layers the networks are built from.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Graph, Var};
use crate::tensor::Tensor;

/// Whether batch-norm layers use batch statistics (and update their running
/// estimates) or the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Puts every tensor on the graph, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

pub(crate) fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = he_normal(rng, &[out_c, in_c, kernel, kernel], in_c * kernel * kernel);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_c])));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let y = g.conv2d(x, vars[self.weight], self.stride, self.pad);
        match self.bias {
            Some(b) => g.add_bias(y, vars[b]),
            None => y,
        }
    }
}

/// Fully-connected layer, weight stored `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_f: usize,
        out_f: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), he_normal(rng, &[out_f, in_f], in_f));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_f]));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let wt = g.transpose(vars[self.weight]);
        let y = g.matmul(x, wt);
        g.add_bias(y, vars[self.bias])
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, buffers: &mut ParamStore, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[c])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::ones(&[c])),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        buffers: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Var {
        let shape = g.shape(x).to_vec();
        let c = shape[1];
        let count = (g.value(x).len() / c) as f64;
        let normalized = match mode {
            Mode::Train => {
                let sum = g.channel_sum(x);
                let mean = g.scale(sum, 1.0 / count);
                let mean_b = g.channel_broadcast(mean, &shape);
                let centered = g.sub(x, mean_b);
                let sq = g.square(centered);
                let sq_sum = g.channel_sum(sq);
                let var = g.scale(sq_sum, 1.0 / count);
                let shifted = g.add_scalar(var, Self::EPS);
                let inv_std = g.powf(shifted, -0.5);
                let inv_b = g.channel_broadcast(inv_std, &shape);

                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let batch_mean = g.value(mean).clone();
                let batch_var = g.value(var).clone();
                let m = Self::MOMENTUM;
                let rm = &mut buffers.values_mut()[self.running_mean];
                for (r, &b) in rm.data_mut().iter_mut().zip(batch_mean.data()) {
                    *r = (1.0 - m) * *r + m * b;
                }
                let rv = &mut buffers.values_mut()[self.running_var];
                for (r, &b) in rv.data_mut().iter_mut().zip(batch_var.data()) {
                    *r = (1.0 - m) * *r + m * b * unbias;
                }
                g.mul(centered, inv_b)
            }
            Mode::Eval => {
                let mean = buffers.values()[self.running_mean].clone();
                let inv = buffers.values()[self.running_var].map(|v| 1.0 / (v + Self::EPS).sqrt());
                let mean = g.constant(mean);
                let inv = g.constant(inv);
                let mean_b = g.channel_broadcast(mean, &shape);
                let inv_b = g.channel_broadcast(inv, &shape);
                let centered = g.sub(x, mean_b);
                g.mul(centered, inv_b)
            }
        };
        let gamma = g.channel_broadcast(vars[self.gamma], &shape);
        let scaled = g.mul(normalized, gamma);
        g.add_bias(scaled, vars[self.beta])
    }
}
