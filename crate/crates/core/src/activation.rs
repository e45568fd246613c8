//! Pointwise continuous piecewise-affine activations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Pointwise nonlinearity. Every variant is affine on each side of zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation<T> {
    Identity,
    Relu,
    /// Slope on the negative side, in `(0, 1)`.
    LeakyRelu(T),
    Abs,
}

impl<T: Scalar> Activation<T> {
    pub fn leaky_relu(alpha: T) -> Result<Self> {
        if alpha > T::zero() && alpha < T::one() {
            Ok(Activation::LeakyRelu(alpha))
        } else {
            Err(Error::Config(format!("leaky_relu slope must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn default_leaky() -> Self {
        Activation::LeakyRelu(T::of(DEFAULT_LEAKY_SLOPE))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu(a) => Self::leaky_relu(a).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Whether the bias shift applies; only the identity map is exempt.
    pub fn is_nonlinear(&self) -> bool {
        !matches!(self, Activation::Identity)
    }

    pub fn apply(&self, x: T) -> T {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(a) => {
                if x > T::zero() {
                    x
                } else {
                    a * x
                }
            }
            Activation::Abs => x.abs(),
        }
    }

    /// Slope of the branch on the positive (`positive == true`) or non-positive side.
    pub fn branch_slope(&self, positive: bool) -> T {
        match (*self, positive) {
            (Activation::Identity, _) | (_, true) => T::one(),
            (Activation::Relu, false) => T::zero(),
            (Activation::LeakyRelu(a), false) => a,
            (Activation::Abs, false) => -T::one(),
        }
    }

    /// Derivative used by backpropagation; zero counts as the non-positive side.
    pub fn derivative(&self, x: T) -> T {
        self.branch_slope(x > T::zero())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Abs => "abs",
        }
    }
}
