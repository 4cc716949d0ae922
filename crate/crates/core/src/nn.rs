//! Small fully connected networks and an Adam optimizer on top of the tape.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::rng::normal_vec;

/// Fully connected network with `tanh` hidden activations and a linear
/// output layer. Weights are row-major `(fan_in x fan_out)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let scale = 1.0 / libm::sqrt(w[0] as f64);
            weights.push(
                normal_vec(rng, w[0] * w[1])
                    .into_iter()
                    .map(|v| v * scale)
                    .collect(),
            );
            biases.push(vec![0.0; w[1]]);
        }
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty layer list")
    }

    pub fn is_consistent(&self) -> bool {
        self.sizes.len() >= 2
            && self.weights.len() == self.sizes.len() - 1
            && self.biases.len() == self.sizes.len() - 1
            && self
                .sizes
                .windows(2)
                .enumerate()
                .all(|(i, w)| self.weights[i].len() == w[0] * w[1] && self.biases[i].len() == w[1])
    }

    /// Parameters as tape leaves, in `(w0, b0, w1, b1, ...)` order.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [tape.input(w), tape.input(b)])
            .collect()
    }

    /// Parameters as tape constants.
    pub fn constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [tape.constant(w), tape.constant(b)])
            .collect()
    }

    /// Forward pass of `rows` stacked inputs.
    pub fn forward_on_tape(&self, tape: &mut Tape, params: &[Var], x: Var, rows: usize) -> Var {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, params[2 * l], rows, self.sizes[l], self.sizes[l + 1]);
            let z = tape.add_row(z, params[2 * l + 1]);
            h = if l + 1 < layers { tape.tanh(z) } else { z };
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = self.biases[l].clone();
            for (i, hi) in h.iter().enumerate() {
                let row = &self.weights[l][i * fo..(i + 1) * fo];
                for (o, w) in z.iter_mut().zip(row) {
                    *o += hi * w;
                }
            }
            debug_assert_eq!(h.len(), fi);
            if l + 1 < layers {
                for v in &mut z {
                    *v = libm::tanh(*v);
                }
            }
            h = z;
        }
        h
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    /// Updates `params` in place given matching gradients.
    pub fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut Vec<f64>>,
        grads: &[Vec<f64>],
    ) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + self.eps);
            }
        }
    }

    pub fn update_mlp(&mut self, net: &mut Mlp, grads: &[Vec<f64>]) {
        self.update(net.params_mut(), grads)
    }
}

pub(crate) fn collect_grads(grads: &Gradients, leaves: &[Var]) -> Vec<Vec<f64>> {
    leaves.iter().map(|v| grads.wrt(*v)).collect()
}
