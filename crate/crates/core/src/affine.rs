//! Slope/offset extraction for the affine piece a network takes on a region.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::Network;
use crate::police::majority_signs;
use crate::region::Region;
use crate::scalar::Scalar;

/// Vertices may sit this far on the wrong side of a hyperplane and still count as agreeing.
pub const SIGN_TOL: f64 = 1e-12;

/// `x ↦ slope·x + offset`, valid on the region it was extracted from.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece<T> {
    /// `K × D`.
    pub slope: Matrix<T>,
    pub offset: Vec<T>,
    /// Side (`+1` / `-1`) of every unit in every nonlinear layer; empty for identity layers.
    pub sign_pattern: Vec<Vec<i8>>,
}

impl<T: Scalar> AffinePiece<T> {
    pub fn eval(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        x.matmul_nt(&self.slope)?.add_row_broadcast(&self.offset)
    }
}

fn chain<T: Scalar>(acc: Option<Matrix<T>>, weights: &Matrix<T>, slopes: &[T]) -> Result<Matrix<T>> {
    let mut next = match acc {
        Some(a) => weights.matmul(&a)?,
        None => weights.clone(),
    };
    let cols = next.cols();
    for (r, &q) in slopes.iter().enumerate() {
        for c in 0..cols {
            next.set(r, c, next.get(r, c) * q);
        }
    }
    Ok(next)
}

/// Affine piece of `net` on `region`. Every vertex must share the sign pattern;
/// the network is normally folded first.
pub fn extract_affine<T: Scalar>(net: &Network<T>, region: &Region<T>) -> Result<AffinePiece<T>> {
    if region.dim() != net.input_dim() {
        return Err(Error::dims("extract_affine", region.vertices().shape(), net.layer(0).weights.shape()));
    }
    let tol = T::of(SIGN_TOL);
    let mut v = region.vertices().clone();
    let mut slope = None;
    let mut pattern = Vec::with_capacity(net.depth());
    for (l, layer) in net.layers().iter().enumerate() {
        let h = layer.pre_activation(&v)?;
        let act = layer.activation;
        let slopes: Vec<T> = if act.is_nonlinear() {
            let signs = majority_signs(&h);
            for (p, row) in h.row_iter().enumerate() {
                if let Some(k) = (0..row.len()).find(|&k| row[k] * signs[k] < -tol) {
                    return Err(Error::Contract(format!(
                        "vertices disagree on the sign of layer {l} unit {k} (vertex {p} has pre-activation {})",
                        row[k]
                    )));
                }
            }
            pattern.push(signs.iter().map(|&s| if s > T::zero() { 1 } else { -1 }).collect());
            signs.iter().map(|&s| act.branch_slope(s > T::zero())).collect()
        } else {
            pattern.push(Vec::new());
            vec![T::one(); layer.outputs()]
        };
        slope = Some(chain(slope, &layer.weights, &slopes)?);
        v = h.map(|x| act.apply(x));
    }
    let slope = slope.expect("network has at least one layer");
    let v1 = Matrix::row_vector(region.vertices().row(0).to_vec());
    let f1 = v.row(0);
    let a_v1 = v1.matmul_nt(&slope)?;
    let offset = f1.iter().zip(a_v1.data()).map(|(&f, &a)| f - a).collect();
    Ok(AffinePiece {
        slope,
        offset,
        sign_pattern: pattern,
    })
}

/// Jacobian `K × D` of the plain forward pass at `x`; zero pre-activations take the positive branch.
pub fn jacobian_at<T: Scalar>(net: &Network<T>, x: &[T]) -> Result<Matrix<T>> {
    let mut h = Matrix::row_vector(x.to_vec());
    if h.cols() != net.input_dim() {
        return Err(Error::dims("jacobian_at", h.shape(), net.layer(0).weights.shape()));
    }
    let mut jac = None;
    for layer in net.layers() {
        let pre = layer.pre_activation(&h)?;
        let act = layer.activation;
        let slopes: Vec<T> = pre.data().iter().map(|&z| act.branch_slope(z >= T::zero())).collect();
        jac = Some(chain(jac, &layer.weights, &slopes)?);
        h = pre.map(|z| act.apply(z));
    }
    Ok(jac.expect("network has at least one layer"))
}
