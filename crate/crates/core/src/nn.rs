//! Small fully connected networks with hand-written backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
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

/// Multi-layer perceptron with a linear output layer.
///
/// Parameters live in one flat vector: for every layer, the row-major
/// `outputs x inputs` weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Layer outputs recorded during a forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has at least the input")
    }
}

impl Mlp {
    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))`, scaled by `gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least an input and an output layer");
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = gain / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out + fan_out).map(|_| rng.gen_range(-bound..bound)));
        }
        Self { sizes: sizes.to_vec(), activation, params }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), activation, params: vec![0.0; n] }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            x = self.layer(offset, w[0], w[1], &x, l < last);
            offset += w[0] * w[1] + w[1];
        }
        x
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        let mut layers = vec![input.to_vec()];
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let y = self.layer(offset, w[0], w[1], layers.last().unwrap(), l < last);
            layers.push(y);
            offset += w[0] * w[1] + w[1];
        }
        Trace { layers }
    }

    fn layer(&self, offset: usize, fan_in: usize, fan_out: usize, x: &[f64], hidden: bool) -> Vec<f64> {
        debug_assert_eq!(x.len(), fan_in);
        let weights = &self.params[offset..offset + fan_in * fan_out];
        let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        weights
            .chunks_exact(fan_in)
            .zip(bias)
            .map(|(row, b)| {
                let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if hidden {
                    self.activation.apply(z)
                } else {
                    z
                }
            })
            .collect()
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    /// Returns `d loss / d input`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grads: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = grad_output.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.layers[l];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
                grads[off + fan_in * fan_out + o] += d;
            }
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * w;
                }
            }
            if l > 0 {
                for (p, y) in prev.iter_mut().zip(x) {
                    *p *= self.activation.derivative_from_output(*y);
                }
            }
            delta = prev;
        }
        delta
    }
}

/// RMSprop without momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: Vec<f64>,
}

impl RmsProp {
    pub fn new(lr: f64, n: usize) -> Self {
        Self { lr, decay: 0.99, eps: 1e-5, square_avg: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for ((p, g), s) in params.iter_mut().zip(grads).zip(self.square_avg.iter_mut()) {
            *s = self.decay * *s + (1.0 - self.decay) * g * g;
            *p -= self.lr * g / (s.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}
