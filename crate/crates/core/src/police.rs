//! Bias shifts that keep every region vertex on one side of every hyperplane.
//!
//! For each nonlinear layer the vertices are pushed through the network, a
//! per-unit side `s` is chosen by majority vote over the vertex pre-activations,
//! and the bias is moved by the smallest `c` that puts every vertex on side `s`.
//! With all vertices sharing one sign pattern per layer, the whole convex hull
//! lies inside a single linear region of the network, so the network is affine
//! there. Training uses [`record_police`]; inference uses [`fold_bias`] once and
//! then the ordinary forward pass.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{Layer, NetVars, Network};
use crate::region::Region;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Shift applied to one nonlinear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShift<T> {
    /// Majority side per unit, each exactly ±1.
    pub signs: Vec<T>,
    /// Bias offset per unit; zero or of the same sign as the unit's side.
    pub shift: Vec<T>,
    /// `min_{p,k} (H_{p,k} + c_k)·s_k` over the shifted vertex pre-activations.
    pub margin: T,
    /// `(unit, vertex)` attaining the margin.
    pub worst: (usize, usize),
}

/// Per-layer shifts; `None` for identity layers, which are never shifted.
#[derive(Debug, Clone, PartialEq)]
pub struct Shift<T> {
    pub layers: Vec<Option<LayerShift<T>>>,
}

impl<T: Scalar> Shift<T> {
    pub fn max_abs_shift(&self) -> T {
        self.layers
            .iter()
            .flatten()
            .flat_map(|l| l.shift.iter().map(|c| c.abs()))
            .fold(T::zero(), T::max)
    }

    pub fn min_margin(&self) -> T {
        self.layers
            .iter()
            .flatten()
            .map(|l| l.margin)
            .fold(T::infinity(), T::min)
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().flatten().all(|l| l.shift.iter().all(|c| c.is_zero()))
    }
}

/// `s_k = +1` when at least half the rows are strictly positive in column `k`, else `−1`.
pub fn majority_signs<T: Scalar>(h: &Matrix<T>) -> Vec<T> {
    let p = h.rows();
    (0..h.cols())
        .map(|k| {
            let positive = h.row_iter().filter(|r| r[k] > T::zero()).count();
            if 2 * positive >= p {
                T::one()
            } else {
                -T::one()
            }
        })
        .collect()
}

/// Majority signs `s` and shift `c = max_p ReLU(−H_{p,k}·s_k)·s_k` for pre-activations `H`.
pub fn compute_shift<T: Scalar>(h: &Matrix<T>) -> Result<(Vec<T>, Vec<T>)> {
    let signs = majority_signs(h);
    let (shift, _) = shift_from_signs(h, &signs)?;
    Ok((signs, shift))
}

/// Same arithmetic as the recorded version so both paths agree bitwise.
fn shift_from_signs<T: Scalar>(h: &Matrix<T>, signs: &[T]) -> Result<(Vec<T>, Vec<usize>)> {
    let violation = h
        .scale_columns(signs)?
        .scale(-T::one())
        .map(|x| Activation::Relu.apply(x));
    let (max, arg) = violation.column_max_over_rows()?;
    let shift = max.iter().zip(signs).map(|(&m, &s)| m * s).collect();
    Ok((shift, arg))
}

fn shifted_bias<T: Scalar>(bias: &[T], shift: &[T]) -> Vec<T> {
    bias.iter().zip(shift).map(|(&b, &c)| b + c).collect()
}

fn margin_of<T: Scalar>(shifted: &Matrix<T>, signs: &[T]) -> (T, (usize, usize)) {
    let mut best = (T::infinity(), (0, 0));
    for (p, row) in shifted.row_iter().enumerate() {
        for (k, (&h, &s)) in row.iter().zip(signs).enumerate() {
            if h * s < best.0 {
                best = (h * s, (k, p));
            }
        }
    }
    best
}

fn check_region<T: Scalar>(net: &Network<T>, region: &Region<T>) -> Result<()> {
    if region.dim() != net.input_dim() {
        return Err(Error::dims(
            "region",
            region.vertices().shape(),
            net.layer(0).weights.shape(),
        ));
    }
    Ok(())
}

/// Runs the region vertices through the network, shifting each nonlinear layer
/// with earlier layers already shifted. Returns effective biases and the shifts.
fn vertex_pass<T: Scalar>(net: &Network<T>, region: &Region<T>) -> Result<(Vec<Vec<T>>, Shift<T>)> {
    check_region(net, region)?;
    let mut v = region.vertices().clone();
    let mut biases = Vec::with_capacity(net.depth());
    let mut layers = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let vw = v.matmul_nt(&layer.weights)?;
        let (bias, info) = if layer.activation.is_nonlinear() {
            let h = vw.add_row_broadcast(&layer.bias)?;
            let signs = majority_signs(&h);
            let (shift, _) = shift_from_signs(&h, &signs)?;
            let bias = shifted_bias(&layer.bias, &shift);
            let (margin, worst) = margin_of(&vw.add_row_broadcast(&bias)?, &signs);
            (
                bias,
                Some(LayerShift {
                    signs,
                    shift,
                    margin,
                    worst,
                }),
            )
        } else {
            (layer.bias.clone(), None)
        };
        let act = layer.activation;
        v = vw.add_row_broadcast(&bias)?.map(|x| act.apply(x));
        biases.push(bias);
        layers.push(info);
    }
    Ok((biases, Shift { layers }))
}

/// Shifts the vertex pass would apply, without touching any batch.
pub fn region_shift<T: Scalar>(net: &Network<T>, region: &Region<T>) -> Result<Shift<T>> {
    vertex_pass(net, region).map(|(_, s)| s)
}

/// Test-time procedure: a network whose plain forward pass equals the constrained one everywhere.
pub fn fold_bias<T: Scalar>(net: &Network<T>, region: &Region<T>) -> Result<Network<T>> {
    let (biases, _) = vertex_pass(net, region)?;
    let layers = net
        .layers()
        .iter()
        .zip(biases)
        .map(|(l, bias)| Layer {
            weights: l.weights.clone(),
            bias,
            activation: l.activation,
        })
        .collect();
    Network::new(layers)
}

/// Constrained forward pass on a batch, without recording.
pub fn forward_police<T: Scalar>(
    net: &Network<T>,
    x: &Matrix<T>,
    region: &Region<T>,
) -> Result<(Matrix<T>, Shift<T>)> {
    let (biases, shift) = vertex_pass(net, region)?;
    let folded = Network::new(
        net.layers()
            .iter()
            .zip(biases)
            .map(|(l, bias)| Layer {
                weights: l.weights.clone(),
                bias,
                activation: l.activation,
            })
            .collect(),
    )?;
    Ok((folded.forward(x)?, shift))
}

/// Train-time procedure on a tape.
///
/// The batch `x` and the vertices travel through the layers together; each
/// shift `c` is a differentiable function of the vertex pre-activations, while
/// the signs are detached constants.
pub fn record_police<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Network<T>,
    vars: &NetVars,
    x: Var,
    region: &Region<T>,
) -> Result<(Var, Shift<T>)> {
    check_region(net, region)?;
    if tape.value(x).cols() != net.input_dim() {
        return Err(Error::dims("forward_police", tape.value(x).shape(), net.layer(0).weights.shape()));
    }
    let mut v = tape.constant(region.vertices().clone());
    let mut h = x;
    let mut layers = Vec::with_capacity(net.depth());
    let last = net.depth() - 1;
    for (i, layer) in net.layers().iter().enumerate() {
        let (w, b) = (vars.weights[i], vars.biases[i]);
        let xw = tape.matmul_nt(h, w)?;
        let vw = tape.matmul_nt(v, w)?;
        let act = layer.activation;
        let bias = if act.is_nonlinear() {
            let pre = tape.add_row_broadcast(vw, b)?;
            let signs = majority_signs(tape.value(pre));
            let flipped = tape.scale_columns(pre, &signs)?;
            let violation = tape.neg(flipped);
            let violation = tape.activation(violation, Activation::Relu)?;
            let worst = tape.column_max_over_rows(violation)?;
            let c = tape.scale_columns(worst, &signs)?;
            let shift = tape.value(c).data().to_vec();
            let bias = tape.add(b, c)?;
            let shifted = tape.add_row_broadcast(vw, bias)?;
            let (margin, worst) = margin_of(tape.value(shifted), &signs);
            layers.push(Some(LayerShift {
                signs,
                shift,
                margin,
                worst,
            }));
            if i < last {
                v = tape.activation(shifted, act)?;
            }
            bias
        } else {
            layers.push(None);
            if i < last {
                let shifted = tape.add_row_broadcast(vw, b)?;
                v = tape.activation(shifted, act)?;
            }
            b
        };
        let pre = tape.add_row_broadcast(xw, bias)?;
        h = tape.activation(pre, act)?;
    }
    Ok((h, Shift { layers }))
}

/// How close a constrained forward pass sits to a non-differentiable point.
#[derive(Debug, Clone, Copy)]
pub struct KinkReport<T> {
    pub distance: T,
    /// Hash of signs, argmax rows and activation sides.
    pub pattern: u64,
}

/// Kink distance and discrete-state fingerprint of `forward_police(net, x, region)`.
///
/// Shifted vertex pre-activations that the shift pins to exactly zero are
/// excluded: they stay at zero under any parameter perturbation.
pub fn police_kinks<T: Scalar>(net: &Network<T>, x: &Matrix<T>, region: &Region<T>) -> Result<KinkReport<T>> {
    check_region(net, region)?;
    let mut hasher = DefaultHasher::new();
    let mut distance = T::infinity();
    let mut note = |d: T| distance = distance.min(d.abs());
    let mut v = region.vertices().clone();
    let mut h = x.clone();
    for layer in net.layers() {
        let act = layer.activation;
        let vw = v.matmul_nt(&layer.weights)?;
        let bias = if act.is_nonlinear() {
            let pre = vw.add_row_broadcast(&layer.bias)?;
            pre.data().iter().for_each(|&z| note(z));
            let signs = majority_signs(&pre);
            let (shift, arg) = shift_from_signs(&pre, &signs)?;
            for k in 0..pre.cols() {
                let mut col: Vec<T> = (0..pre.rows()).map(|p| -pre.get(p, k) * signs[k]).collect();
                note(col[arg[k]]);
                if col[arg[k]] > T::zero() && col.len() > 1 {
                    let top = col.swap_remove(arg[k]);
                    let second = col.into_iter().fold(T::zero(), T::max);
                    note(top - second);
                }
                (signs[k] > T::zero()).hash(&mut hasher);
                arg[k].hash(&mut hasher);
                shift[k].is_zero().hash(&mut hasher);
            }
            let bias = shifted_bias(&layer.bias, &shift);
            let shifted = vw.add_row_broadcast(&bias)?;
            for p in 0..shifted.rows() {
                for k in 0..shifted.cols() {
                    let pinned = !shift[k].is_zero() && arg[k] == p;
                    if !pinned {
                        note(shifted.get(p, k));
                        (shifted.get(p, k) > T::zero()).hash(&mut hasher);
                    }
                }
            }
            bias
        } else {
            layer.bias.clone()
        };
        v = vw.add_row_broadcast(&bias)?.map(|z| act.apply(z));
        let pre = layer.pre_activation_with(&h, &bias)?;
        if act.is_nonlinear() {
            for &z in pre.data() {
                note(z);
                (z > T::zero()).hash(&mut hasher);
            }
        }
        h = pre.map(|z| act.apply(z));
    }
    Ok(KinkReport {
        distance,
        pattern: hasher.finish(),
    })
}

impl<T: Scalar> Layer<T> {
    fn pre_activation_with(&self, x: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
        x.matmul_nt(&self.weights)?.add_row_broadcast(bias)
    }
}
