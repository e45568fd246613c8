use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{NetVars, Network};
use crate::police::record_police;
use crate::region::Region;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Relative finite-difference step, scaled by the region diameter.
pub const PENALTY_REL_STEP: f64 = 1e-4;

/// Desired affine map `x ↦ A*x + b*` on the region, enforced at one anchor point.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTarget<T> {
    /// `K × D`.
    pub slope: Matrix<T>,
    pub offset: Vec<T>,
    pub anchor: Vec<T>,
    pub weight: T,
}

/// JSON form; a missing anchor means the region centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTargetSpec {
    pub slope: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<f64>>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl AffineTargetSpec {
    pub fn build<T: Scalar>(&self, region: &Region<T>) -> Result<AffineTarget<T>> {
        let rows: Vec<Vec<T>> = self.slope.iter().map(|r| r.iter().map(|&x| T::of(x)).collect()).collect();
        let slope = Matrix::from_rows(&rows)?;
        let anchor = match &self.anchor {
            Some(a) => a.iter().map(|&x| T::of(x)).collect(),
            None => region.centroid(),
        };
        AffineTarget::new(slope, self.offset.iter().map(|&x| T::of(x)).collect(), anchor, T::of(self.weight))
    }
}

impl<T: Scalar> AffineTarget<T> {
    pub fn new(slope: Matrix<T>, offset: Vec<T>, anchor: Vec<T>, weight: T) -> Result<Self> {
        if offset.len() != slope.rows() {
            return Err(Error::dims("affine target offset", slope.shape(), (1, offset.len())));
        }
        if anchor.len() != slope.cols() {
            return Err(Error::dims("affine target anchor", slope.shape(), (1, anchor.len())));
        }
        if !(weight >= T::zero()) || !weight.is_finite() {
            return Err(Error::Config(format!("penalty weight {} must be non-negative", weight)));
        }
        if anchor.iter().chain(&offset).any(|x| !x.is_finite()) {
            return Err(Error::Validation("affine target has non-finite entries".into()));
        }
        Ok(Self {
            slope,
            offset,
            anchor,
            weight,
        })
    }

    /// Checks shapes against the network and, where the region supports it, anchor containment.
    pub fn validate_for(&self, net: &Network<T>, region: &Region<T>) -> Result<()> {
        if self.slope.shape() != (net.output_dim(), net.input_dim()) {
            return Err(Error::dims(
                "affine target slope",
                self.slope.shape(),
                (net.output_dim(), net.input_dim()),
            ));
        }
        match region.contains(&self.anchor) {
            Ok(false) => Err(Error::Validation(format!("anchor {:?} lies outside the region", self.anchor))),
            Ok(true) | Err(Error::Unsupported(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }
}

fn inside<T: Scalar>(region: &Region<T>, x: &[T]) -> bool {
    region.contains(x).unwrap_or(true)
}

/// `weight · (‖J − A*‖²_F + ‖f(v) − A*v − b*‖²)` at the anchor `v`, recorded on the tape.
///
/// `J` comes from one-sided differences of the constrained forward pass along
/// each axis, stepping towards the inside of the region. On the region the map
/// is affine, so the quotient is exact up to round-off.
pub fn affine_target_penalty<T: Scalar>(
    tape: &mut Tape<T>,
    net: &Network<T>,
    vars: &NetVars,
    region: &Region<T>,
    target: &AffineTarget<T>,
) -> Result<Var> {
    target.validate_for(net, region)?;
    let d = net.input_dim();
    let diameter = region.diameter();
    let eps = T::of(PENALTY_REL_STEP) * if diameter > T::zero() { diameter } else { T::one() };
    let v = &target.anchor;

    let mut points = Vec::with_capacity((d + 1) * d);
    points.extend_from_slice(v);
    let mut steps = Vec::with_capacity(d);
    for i in 0..d {
        let mut p = v.clone();
        p[i] = v[i] + eps;
        let h = if inside(region, &p) {
            eps
        } else {
            p[i] = v[i] - eps;
            if !inside(region, &p) {
                return Err(Error::Validation(format!(
                    "no in-region finite-difference step along axis {i} from the anchor"
                )));
            }
            -eps
        };
        steps.push(h);
        points.extend_from_slice(&p);
    }
    let points = tape.constant(Matrix::new(d + 1, d, points)?);
    let (out, _) = record_police(tape, net, vars, points, region)?;

    // row i of `diff` maps the stacked outputs to (f(v + h e_i) − f(v)) / h
    let mut diff = Matrix::zeros(d, d + 1);
    for (i, &h) in steps.iter().enumerate() {
        diff.set(i, 0, -T::one() / h);
        diff.set(i, i + 1, T::one() / h);
    }
    let diff = tape.constant(diff);
    let jt = tape.matmul(diff, out)?;
    let target_jt = tape.constant(target.slope.transpose());
    let j_err = tape.sub(jt, target_jt)?;

    let mut select = Matrix::zeros(1, d + 1);
    select.set(0, 0, T::one());
    let select = tape.constant(select);
    let fv = tape.matmul(select, out)?;
    let want = Matrix::row_vector(v.clone())
        .matmul_nt(&target.slope)?
        .add_row_broadcast(&target.offset)?;
    let want = tape.constant(want);
    let f_err = tape.sub(fv, want)?;

    let a = tape.sum_squares(j_err);
    let b = tape.sum_squares(f_err);
    let total = tape.add(a, b)?;
    Ok(tape.scale(total, target.weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::net::Layer;

    fn eval(net: &Network<f64>, region: &Region<f64>, target: &AffineTarget<f64>) -> f64 {
        let mut tape = Tape::new();
        let vars = net.attach(&mut tape);
        let p = affine_target_penalty(&mut tape, net, &vars, region, target).unwrap();
        tape.scalar(p)
    }

    #[test]
    fn hand_example_is_eight() {
        let net = Network::new(vec![Layer::new(Matrix::filled(1, 1, 2.0), vec![0.0], Activation::Identity).unwrap()]).unwrap();
        let region = Region::aligned_box(&[0.0], &[2.0]).unwrap();
        let target = AffineTarget::new(Matrix::zeros(1, 1), vec![0.0], vec![1.0], 1.0).unwrap();
        assert!((eval(&net, &region, &target) - 8.0).abs() < 1e-9);

        // anchor on the upper face steps inwards
        let target = AffineTarget::new(Matrix::zeros(1, 1), vec![0.0], vec![2.0], 1.0).unwrap();
        assert!((eval(&net, &region, &target) - 20.0).abs() < 1e-8);
    }

    #[test]
    fn zero_when_already_on_target() {
        let region = Region::aligned_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let net = Network::<f64>::mlp(&[2, 8, 8, 1], Activation::Relu, 2).unwrap();
        let piece = crate::affine::extract_affine(&crate::police::fold_bias(&net, &region).unwrap(), &region).unwrap();
        let target = AffineTarget::new(piece.slope, piece.offset, vec![0.1, -0.3], 3.0).unwrap();
        assert!(eval(&net, &region, &target) < 1e-12);
    }

    #[test]
    fn anchor_outside_rejected() {
        let net = Network::<f64>::mlp(&[2, 4, 1], Activation::Relu, 0).unwrap();
        let region = Region::<f64>::simplex(2).unwrap();
        let target = AffineTarget::new(Matrix::zeros(1, 2), vec![0.0], vec![0.9, 0.9], 1.0).unwrap();
        let mut tape = Tape::new();
        let vars = net.attach(&mut tape);
        assert!(matches!(
            affine_target_penalty(&mut tape, &net, &vars, &region, &target),
            Err(Error::Validation(_))
        ));
        assert!(AffineTarget::new(Matrix::<f64>::zeros(1, 2), vec![0.0], vec![0.1, 0.1], -1.0).is_err());
    }

    #[test]
    fn spec_defaults_to_centroid() {
        let region = Region::aligned_box(&[0.0, 2.0], &[2.0, 4.0]).unwrap();
        let spec: AffineTargetSpec = serde_json::from_str(r#"{"slope":[[1,2]],"offset":[0.5]}"#).unwrap();
        let target = spec.build(&region).unwrap();
        assert_eq!(target.anchor, vec![1.0, 3.0]);
        assert_eq!(target.weight, 1.0);
    }
}
