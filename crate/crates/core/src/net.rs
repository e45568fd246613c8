//! Dense multilayer perceptrons with piecewise-affine activations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// `x ↦ σ(W x + b)` with `W` stored as `(outputs × inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>, activation: Activation<T>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Validation(format!(
                "bias has {} entries but weights have {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) || !weights.is_finite() {
            return Err(Error::Validation("layer parameters must be finite".into()));
        }
        activation.validate()?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activations `X Wᵀ + 1 bᵀ` for a batch of row inputs.
    pub fn pre_activation(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        x.matmul_nt(&self.weights)?.add_row_broadcast(&self.bias)
    }
}

/// Composition of dense layers; consecutive widths chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

/// Tape handles for every weight matrix and bias row of a network.
#[derive(Debug, Clone)]
pub struct NetVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl NetVars {
    /// Interleaved `[W1, b1, W2, b2, ...]`, the order used by [`Network::params`].
    pub fn all(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Validation(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// MLP with widths `dims`, `act` on hidden layers and an identity output layer.
    ///
    /// Weights are uniform in `±1/√fan_in`, biases zero.
    pub fn mlp(dims: &[usize], act: Activation<T>, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Validation(format!(
                "layer widths need at least two positive entries, got {dims:?}"
            )));
        }
        act.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    weights: Matrix::from_raw(fan_out, fan_in, data),
                    bias: vec![T::zero(); fan_out],
                    activation: if i == last { Activation::Identity } else { act },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer<T> {
        &self.layers[i]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer widths `[D, D^(2), ..., K]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [T] {
        self.layers[layer].weights.data_mut()
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        &mut self.layers[layer].bias
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn param_norm_sq(&self) -> T {
        self.layers
            .iter()
            .map(|l| l.weights.sum_squares() + l.bias.iter().map(|&b| b * b).sum::<T>())
            .sum()
    }

    /// Parameters as `[W1, b1, W2, b2, ...]` with biases as `1 × n` rows.
    pub fn params(&self) -> Vec<Matrix<T>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.clone(), Matrix::row_vector(l.bias.clone())])
            .collect()
    }

    /// Copy of the network with parameters replaced, in [`Network::params`] order.
    pub fn with_params(&self, params: &[Matrix<T>]) -> Result<Self> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter blocks, got {}",
                2 * self.layers.len(),
                params.len()
            )));
        }
        let mut out = self.clone();
        for (l, pair) in out.layers.iter_mut().zip(params.chunks(2)) {
            if pair[0].shape() != l.weights.shape() || pair[1].shape() != (1, l.bias.len()) {
                return Err(Error::dims("with_params", l.weights.shape(), pair[0].shape()));
            }
            l.weights = pair[0].clone();
            l.bias = pair[1].data().to_vec();
        }
        Ok(out)
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("forward", x.shape(), self.layers[0].weights.shape()));
        }
        Ok(())
    }

    /// Plain composition `f^(L) ∘ … ∘ f^(1)` on a batch of row inputs.
    ///
    /// This is the only inference path; a folded network runs it unchanged.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            h = layer.pre_activation(&h)?.map(|v| act.apply(v));
        }
        Ok(h)
    }

    /// Registers every weight and bias as a parameter leaf.
    pub fn attach(&self, tape: &mut Tape<T>) -> NetVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.param(l.weights.clone()));
            biases.push(tape.param(Matrix::row_vector(l.bias.clone())));
        }
        NetVars { weights, biases }
    }

    /// Tape-recorded version of [`Network::forward`].
    pub fn record_forward(&self, tape: &mut Tape<T>, vars: &NetVars, x: Var) -> Result<Var> {
        self.check_input(tape.value(x))?;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let xw = tape.matmul_nt(h, vars.weights[i])?;
            let pre = tape.add_row_broadcast(xw, vars.biases[i])?;
            h = tape.activation(pre, layer.activation)?;
        }
        Ok(h)
    }
}

/// Unconstrained forward pass.
pub fn forward_standard<T: Scalar>(net: &Network<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    net.forward(x)
}
