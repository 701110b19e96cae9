//! Three-layer MLP Q-function: ReLU hidden layers, linear output, f64
//! throughout, exact backpropagation. No autograd framework; the network is
//! small enough that hand-rolled dense math is both faster and easier to
//! verify against finite differences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense parameters of the Q-network. Weight matrices are stored flat,
/// row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Layer widths: input, hidden1, hidden2, output.
    pub dims: [usize; 4],
    pub weights: [Vec<f64>; 3],
    pub biases: [Vec<f64>; 3],
}

/// Post-activation values kept from a forward pass for backprop. Reusable:
/// every pass overwrites the buffers in place.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub q: Vec<f64>,
}

/// Parameter gradients, same shapes as [`MlpParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: [Vec<f64>; 3],
    pub d_biases: [Vec<f64>; 3],
}

impl Gradients {
    pub fn zeros(dims: &[usize; 4]) -> Self {
        Gradients {
            d_weights: [
                vec![0.0; dims[0] * dims[1]],
                vec![0.0; dims[1] * dims[2]],
                vec![0.0; dims[2] * dims[3]],
            ],
            d_biases: [
                vec![0.0; dims[1]],
                vec![0.0; dims[2]],
                vec![0.0; dims[3]],
            ],
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense(weights: &[f64], biases: &[f64], input: &[f64], out: &mut Vec<f64>, relu: bool) {
    let in_dim = input.len();
    out.clear();
    out.reserve(biases.len());
    for (row, &b) in weights.chunks_exact(in_dim).zip(biases) {
        let mut v = b + dot(row, input);
        if relu && v < 0.0 {
            v = 0.0;
        }
        out.push(v);
    }
}

impl MlpParams {
    /// Deterministic initialization: weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new(dims: [usize; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights: [Vec<f64>; 3] = Default::default();
        let mut biases: [Vec<f64>; 3] = Default::default();
        for layer in 0..3 {
            let fan_in = dims[layer];
            let fan_out = dims[layer + 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights[layer] = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            biases[layer] = vec![0.0; fan_out];
        }
        MlpParams {
            dims,
            weights,
            biases,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[3]
    }

    /// Checks that stored shapes are consistent and entries finite.
    pub fn validate(&self) -> Result<()> {
        for layer in 0..3 {
            let expect = self.dims[layer] * self.dims[layer + 1];
            if self.weights[layer].len() != expect || self.biases[layer].len() != self.dims[layer + 1]
            {
                return Err(Error::DimensionMismatch(format!(
                    "layer {layer} storage does not match dims {:?}",
                    self.dims
                )));
            }
            if self.weights[layer].iter().any(|w| !w.is_finite())
                || self.biases[layer].iter().any(|b| !b.is_finite())
            {
                return Err(Error::DimensionMismatch(format!(
                    "layer {layer} contains non-finite parameters"
                )));
            }
        }
        Ok(())
    }

    pub fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let mut cache = ForwardCache::default();
        self.forward_into(input, &mut cache);
        cache
    }

    /// Forward pass writing into reusable buffers.
    pub fn forward_into(&self, input: &[f64], cache: &mut ForwardCache) {
        debug_assert_eq!(input.len(), self.dims[0]);
        let ForwardCache { h1, h2, q } = cache;
        dense(&self.weights[0], &self.biases[0], input, h1, true);
        dense(&self.weights[1], &self.biases[1], h1, h2, true);
        dense(&self.weights[2], &self.biases[2], h2, q, false);
    }

    /// Q-values for one state vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.dims[0] {
            return Err(Error::DimensionMismatch(format!(
                "state length {} does not match network input {}",
                input.len(),
                self.dims[0]
            )));
        }
        Ok(self.forward_cached(input).q)
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn forward_macs(&self) -> u64 {
        (self.dims[0] * self.dims[1] + self.dims[1] * self.dims[2] + self.dims[2] * self.dims[3])
            as u64
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat parameter view (weights then biases, layer by layer); used by the
    /// finite-difference gradient oracle.
    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for layer in 0..3 {
            if i < self.weights[layer].len() {
                return self.weights[layer][i];
            }
            i -= self.weights[layer].len();
            if i < self.biases[layer].len() {
                return self.biases[layer][i];
            }
            i -= self.biases[layer].len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for layer in 0..3 {
            if i < self.weights[layer].len() {
                self.weights[layer][i] = value;
                return;
            }
            i -= self.weights[layer].len();
            if i < self.biases[layer].len() {
                self.biases[layer][i] = value;
                return;
            }
            i -= self.biases[layer].len();
        }
        panic!("flat index {index} out of range");
    }

    /// Gradient in the same flat order as [`get_flat`].
    pub fn grad_flat(grads: &Gradients, index: usize) -> f64 {
        let mut i = index;
        for layer in 0..3 {
            if i < grads.d_weights[layer].len() {
                return grads.d_weights[layer][i];
            }
            i -= grads.d_weights[layer].len();
            if i < grads.d_biases[layer].len() {
                return grads.d_biases[layer][i];
            }
            i -= grads.d_biases[layer].len();
        }
        panic!("flat index {index} out of range");
    }
}

/// Accumulates one sample's contribution to the gradients. `d_q_action` is
/// dL/dQ(s)[action]; the loss touches a single output row, so the output
/// layer backprop is sparse.
pub fn backward_sample(
    params: &MlpParams,
    input: &[f64],
    cache: &ForwardCache,
    action: usize,
    d_q_action: f64,
    grads: &mut Gradients,
) {
    let [d0, d1, d2, _] = params.dims;

    // Output layer: only row `action` receives gradient.
    let out_row = &params.weights[2][action * d2..(action + 1) * d2];
    let g_row = &mut grads.d_weights[2][action * d2..(action + 1) * d2];
    for (g, &h) in g_row.iter_mut().zip(&cache.h2) {
        *g += d_q_action * h;
    }
    grads.d_biases[2][action] += d_q_action;

    // Hidden layer 2.
    let mut d_z2 = vec![0.0; d2];
    for j in 0..d2 {
        if cache.h2[j] > 0.0 {
            d_z2[j] = d_q_action * out_row[j];
        }
    }
    for (j, &dz) in d_z2.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        let g_row = &mut grads.d_weights[1][j * d1..(j + 1) * d1];
        for (g, &h) in g_row.iter_mut().zip(&cache.h1) {
            *g += dz * h;
        }
        grads.d_biases[1][j] += dz;
    }

    // Hidden layer 1.
    let mut d_z1 = vec![0.0; d1];
    for (j, &dz) in d_z2.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        let w_row = &params.weights[1][j * d1..(j + 1) * d1];
        for (slot, &w) in d_z1.iter_mut().zip(w_row) {
            *slot += dz * w;
        }
    }
    for (slot, &h) in d_z1.iter_mut().zip(&cache.h1) {
        if h <= 0.0 {
            *slot = 0.0;
        }
    }
    for (i, &dz) in d_z1.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        let g_row = &mut grads.d_weights[0][i * d0..(i + 1) * d0];
        for (g, &x) in g_row.iter_mut().zip(input) {
            *g += dz * x;
        }
        grads.d_biases[0][i] += dz;
    }
}

/// One plain SGD step: `p -= lr * g`.
pub fn sgd_apply(params: &mut MlpParams, grads: &Gradients, lr: f64) {
    for layer in 0..3 {
        for (p, g) in params.weights[layer]
            .iter_mut()
            .zip(&grads.d_weights[layer])
        {
            *p -= lr * g;
        }
        for (p, g) in params.biases[layer].iter_mut().zip(&grads.d_biases[layer]) {
            *p -= lr * g;
        }
    }
}
