use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                Err(Error::Config(format!("sgd momentum {momentum} outside [0, 1)")))
            }
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 =>
            {
                Err(Error::Config(format!("adam parameters beta1={beta1} beta2={beta2} eps={eps} out of range")))
            }
            _ => Ok(()),
        }
    }
}

/// SGD with momentum or Adam, with weight decay coupled into the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    pub weight_decay: T,
    /// Updates applied so far.
    pub t: u64,
    /// Momentum buffer (sgd) or first moment (adam); empty until the first step.
    pub first: Vec<Matrix<T>>,
    /// Second moment (adam only).
    pub second: Vec<Matrix<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Result<Self> {
        kind.validate()?;
        if lr.is_nan() || lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if weight_decay.is_nan() || weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay {weight_decay} must be non-negative")));
        }
        Ok(Self {
            kind,
            lr: T::of(lr),
            weight_decay: T::of(weight_decay),
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Validation(format!(
                "{} parameter blocks but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::dims("optimizer step", p.shape(), g.shape()));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        } else if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(b, p)| b.shape() != p.shape()) {
            return Err(Error::Validation("optimizer state does not match the parameters".into()));
        }
        self.t += 1;
        let lr = self.lr;
        let wd = self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let mu = T::of(momentum);
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((p, &g), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
                        let g = g + wd * *p;
                        *b = mu * *b + g;
                        *p = *p - lr * *b;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let t = i32::try_from(self.t).unwrap_or(i32::MAX);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let one = T::one();
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((p, &g), m), v) in it {
                        let g = g + wd * *p;
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
