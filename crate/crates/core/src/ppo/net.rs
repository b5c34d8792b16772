//! Dense multilayer perceptron with per-hidden-layer neuron masks and
//! hand-written batched forward/backward passes.
//!
//! A mask entry of zero gates its neuron's post-activation output to exactly
//! zero (Hadamard product), which in turn zeroes every gradient flowing
//! through that neuron — pruned structure receives no updates. Batches are
//! stored column-major: one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PpoError;

/// Activation applied by one layer before masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, z: &mut DMatrix<f64>) {
        if let Activation::Tanh = self {
            z.apply(|v| *v = v.tanh());
        }
    }

    /// Derivative expressed through the activation's own output.
    fn derivative_from_output(&self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// One affine layer: `activation(W·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// A multilayer perceptron whose hidden-layer outputs are gated by binary
/// masks. Masks cover every layer except the last (the output head is never
/// pruned); entries are exactly 0.0 or 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedNetwork {
    pub layers: Vec<Layer>,
    pub masks: Vec<DVector<f64>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// The network input, one sample per column.
    input: DMatrix<f64>,
    /// Post-activation, post-mask output of every layer.
    outputs: Vec<DMatrix<f64>>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
}

impl Gradients {
    /// All-zero gradients shaped for `net`.
    pub fn zeros_like(net: &MaskedNetwork) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
            bias: net
                .layers
                .iter()
                .map(|l| DVector::zeros(l.bias.len()))
                .collect(),
        }
    }

    /// Accumulates `other` scaled by `factor`.
    pub fn axpy(&mut self, factor: f64, other: &Gradients) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += factor * o;
        }
        for (b, o) in self.bias.iter_mut().zip(&other.bias) {
            *b += factor * o;
        }
    }
}

impl MaskedNetwork {
    /// Builds an MLP with tanh hidden layers and an identity output head.
    /// Weights use the uniform fan-balanced initialization; the output layer
    /// is scaled down so initial outputs sit near zero; masks start all-ones.
    pub fn mlp<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(Layer {
                weights: init_weights(width, fan_in, 1.0, rng),
                bias: DVector::zeros(width),
                activation: Activation::Tanh,
            });
            fan_in = width;
        }
        layers.push(Layer {
            weights: init_weights(output_dim, fan_in, 0.01, rng),
            bias: DVector::zeros(output_dim),
            activation: Activation::Identity,
        });
        let masks = hidden.iter().map(|&w| DVector::repeat(w, 1.0)).collect();
        MaskedNetwork { layers, masks }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Batched forward pass; input and output hold one sample per column.
    pub fn forward_batch(
        &self,
        input: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, ForwardCache), PpoError> {
        if input.nrows() != self.input_dim() {
            return Err(PpoError::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: input.nrows(),
            });
        }
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for (h, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &current;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            layer.activation.apply(&mut z);
            if let Some(mask) = self.masks.get(h) {
                for mut col in z.column_iter_mut() {
                    col.component_mul_assign(mask);
                }
            }
            outputs.push(z.clone());
            current = z;
        }
        Ok((
            current,
            ForwardCache {
                input: input.clone(),
                outputs,
            },
        ))
    }

    /// Single-sample forward pass for a scalar-output network.
    pub fn forward_scalar(&self, input: &DVector<f64>) -> Result<f64, PpoError> {
        let m = DMatrix::from_column_slice(input.len(), 1, input.as_slice());
        let (out, _) = self.forward_batch(&m)?;
        Ok(out[(0, 0)])
    }

    /// Backpropagates `grad_output` (same shape as the forward output)
    /// through the cached pass, returning parameter gradients. Masked
    /// neurons contribute exactly zero to every gradient.
    pub fn backward_batch(&self, cache: &ForwardCache, grad_output: &DMatrix<f64>) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_output.clone();
        for h in (0..self.layers.len()).rev() {
            let layer = &self.layers[h];
            let out = &cache.outputs[h];
            // The stored output is activation(z) ∘ m. For tanh, the
            // derivative can be recovered from the output wherever the mask
            // is 1; where the mask is 0 the path is dead and the mask factor
            // below kills the term regardless.
            for (mut col, out_col) in delta.column_iter_mut().zip(out.column_iter()) {
                for (d, &o) in col.iter_mut().zip(out_col.iter()) {
                    *d *= layer.activation.derivative_from_output(o);
                }
            }
            if let Some(mask) = self.masks.get(h) {
                for mut col in delta.column_iter_mut() {
                    col.component_mul_assign(mask);
                }
            }
            let below: &DMatrix<f64> = if h == 0 { &cache.input } else { &cache.outputs[h - 1] };
            grads.weights[h] = &delta * below.transpose();
            grads.bias[h] = DVector::from_iterator(
                delta.nrows(),
                delta.row_iter().map(|r| r.iter().sum::<f64>()),
            );
            if h > 0 {
                delta = layer.weights.transpose() * delta;
            }
        }
        grads
    }

    /// Gradient-descent step: `θ ← θ − lr·g`, then re-applies the masks so
    /// gated parameters stay exactly zero.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.bias))
        {
            layer.weights -= lr * gw;
            layer.bias -= lr * gb;
        }
        self.apply_masks_to_params();
    }

    /// Zeroes every parameter owned by a masked neuron: its incoming weight
    /// row and bias, and the outgoing column in the next layer.
    pub fn apply_masks_to_params(&mut self) {
        for (h, mask) in self.masks.iter().enumerate() {
            for (j, &m) in mask.iter().enumerate() {
                if m == 0.0 {
                    self.layers[h].weights.row_mut(j).fill(0.0);
                    self.layers[h].bias[j] = 0.0;
                    self.layers[h + 1].weights.column_mut(j).fill(0.0);
                }
            }
        }
    }

    /// Fraction of hidden neurons still active.
    pub fn density(&self) -> f64 {
        let total: usize = self.masks.iter().map(|m| m.len()).sum();
        if total == 0 {
            return 1.0;
        }
        let active: f64 = self.masks.iter().map(|m| m.sum()).sum();
        active / total as f64
    }

    /// Physically removes masked neurons, returning a smaller all-ones-mask
    /// network that computes the identical function.
    pub fn shrunken(&self) -> MaskedNetwork {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut keep_below: Vec<usize> = (0..self.input_dim()).collect();
        let mut masks = Vec::with_capacity(self.masks.len());
        for (h, layer) in self.layers.iter().enumerate() {
            let keep_here: Vec<usize> = match self.masks.get(h) {
                Some(mask) => (0..mask.len()).filter(|&j| mask[j] != 0.0).collect(),
                None => (0..layer.weights.nrows()).collect(),
            };
            let weights = DMatrix::from_fn(keep_here.len(), keep_below.len(), |r, c| {
                layer.weights[(keep_here[r], keep_below[c])]
            });
            let bias = DVector::from_iterator(
                keep_here.len(),
                keep_here.iter().map(|&j| layer.bias[j]),
            );
            layers.push(Layer {
                weights,
                bias,
                activation: layer.activation,
            });
            if self.masks.get(h).is_some() {
                masks.push(DVector::repeat(keep_here.len(), 1.0));
            }
            keep_below = keep_here;
        }
        MaskedNetwork { layers, masks }
    }
}

fn init_weights<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let bound = scale * (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}
