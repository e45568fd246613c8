//! Certificates that a network is affine on a region.
//!
//! A certificate combines three checks: vertex sign margins (every vertex on
//! the same side of every hyperplane), two sampling checks of affineness, and
//! agreement between the train-time constrained pass and the folded network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::affine::{extract_affine, SIGN_TOL};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::Network;
use crate::police::{compute_shift, fold_bias, majority_signs, record_police};
use crate::region::Region;
use crate::scalar::Scalar;
use crate::tape::Tape;

pub const DEFAULT_TOL: f64 = 1e-6;

/// Resampling attempts before a rank-deficient fit is declared inconclusive.
const FIT_ATTEMPTS: usize = 5;

/// Violations listed in a certificate before truncation.
const MAX_VIOLATIONS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    /// Process exit code: 0 pass, 2 fail, 3 inconclusive.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
            Status::Inconclusive => 3,
        }
    }
}

/// Which function of the stored parameters is being certified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    /// The constrained function: biases shifted against the region first.
    Policed,
    /// The plain forward pass of the parameters as stored, e.g. a folded model.
    AsIs,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub samples: usize,
    pub tol: f64,
    pub seed: u64,
    /// Probes for the fold comparison, split between inside and outside the region.
    pub probes: usize,
    pub semantics: Semantics,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            tol: DEFAULT_TOL,
            seed: 0,
            probes: 100,
            semantics: Semantics::Policed,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Violation {
    pub layer: usize,
    pub unit: usize,
    pub vertex: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LayerMargin {
    pub layer: usize,
    pub margin: f64,
    pub unit: usize,
    pub vertex: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MarginReport {
    /// One entry per nonlinear layer.
    pub layers: Vec<LayerMargin>,
    /// `None` when the network has no nonlinear layer.
    pub min_margin: Option<f64>,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

/// Per-layer `min_{p,k} H_{p,k}·s_k` over the region vertices.
///
/// With [`Semantics::Policed`] the margins are taken after each layer's shift,
/// otherwise on the raw pre-activations against their majority side.
pub fn certify_sign_patterns<T: Scalar>(
    net: &Network<T>,
    region: &Region<T>,
    semantics: Semantics,
) -> Result<MarginReport> {
    if region.dim() != net.input_dim() {
        return Err(Error::dims("certify_sign_patterns", region.vertices().shape(), net.layer(0).weights.shape()));
    }
    let mut v = region.vertices().clone();
    let mut layers = Vec::new();
    let mut violations = Vec::new();
    let mut truncated = 0usize;
    for (l, layer) in net.layers().iter().enumerate() {
        let act = layer.activation;
        let vw = v.matmul_nt(&layer.weights)?;
        let raw = vw.add_row_broadcast(&layer.bias)?;
        let bias = if act.is_nonlinear() {
            let (signs, bias) = match semantics {
                Semantics::Policed => {
                    let (signs, shift) = compute_shift(&raw)?;
                    let bias: Vec<T> = layer.bias.iter().zip(&shift).map(|(&b, &c)| b + c).collect();
                    (signs, bias)
                }
                Semantics::AsIs => (majority_signs(&raw), layer.bias.clone()),
            };
            let pre = vw.add_row_broadcast(&bias)?;
            let mut worst = LayerMargin {
                layer: l,
                margin: f64::INFINITY,
                unit: 0,
                vertex: 0,
            };
            for (p, row) in pre.row_iter().enumerate() {
                for (k, (&h, &s)) in row.iter().zip(&signs).enumerate() {
                    let m = (h * s).as_f64();
                    if m < worst.margin {
                        worst = LayerMargin {
                            layer: l,
                            margin: m,
                            unit: k,
                            vertex: p,
                        };
                    }
                    if m < -SIGN_TOL {
                        if violations.len() < MAX_VIOLATIONS {
                            violations.push(Violation {
                                layer: l,
                                unit: k,
                                vertex: p,
                                margin: m,
                            });
                        } else {
                            truncated += 1;
                        }
                    }
                }
            }
            layers.push(worst);
            bias
        } else {
            layer.bias.clone()
        };
        v = vw.add_row_broadcast(&bias)?.map(|x| act.apply(x));
    }
    if truncated > 0 {
        log::debug!("{truncated} further margin violations not listed");
    }
    let min_margin = layers.iter().map(|l| l.margin).reduce(f64::min);
    Ok(MarginReport {
        passed: violations.is_empty(),
        layers,
        min_margin,
        violations,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FoldReport {
    pub max_delta: f64,
    pub probes: usize,
    /// No probes were evaluated.
    pub vacuous: bool,
}

/// Probes half inside the region (barycentric) and half around it (Gaussian, 3× diameter).
fn probe_points<T: Scalar>(region: &Region<T>, n: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let inside = n / 2;
    let outside = n - inside;
    let d = region.dim();
    let centre = region.centroid();
    let diameter = region.diameter().as_f64();
    let scale = 3.0 * if diameter > 0.0 { diameter } else { 1.0 };
    let mut data = region.sample_with(inside, rng).into_data();
    for _ in 0..outside {
        for &c in &centre {
            let z: f64 = StandardNormal.sample(rng);
            data.push(c + T::of(scale * z));
        }
    }
    Matrix::from_raw(n, d, data)
}

/// `max |train-time constrained pass − folded plain pass|` over probes inside and outside the region.
pub fn certify_fold_equivalence<T: Scalar>(
    net: &Network<T>,
    region: &Region<T>,
    probes: usize,
    seed: u64,
) -> Result<FoldReport> {
    let folded = fold_bias(net, region)?;
    if probes == 0 {
        return Ok(FoldReport {
            max_delta: 0.0,
            probes,
            vacuous: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = probe_points(region, probes, &mut rng);
    let mut tape = Tape::new();
    let vars = net.attach(&mut tape);
    let xv = tape.constant(x.clone());
    let (policed, _) = record_police(&mut tape, net, &vars, xv, region)?;
    let delta = tape
        .value(policed)
        .max_abs_diff(&folded.forward(&x)?)
        .expect("same output shape");
    Ok(FoldReport {
        max_delta: delta.as_f64(),
        probes,
        vacuous: false,
    })
}

/// Outcome of a full affineness check.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Certificate {
    pub status: Status,
    pub passed: bool,
    pub semantics: Semantics,
    pub tol: f64,
    pub samples: usize,
    pub sign_margin: Option<f64>,
    /// `max |f(Vᵀα) − Σ_p α_p f(v_p)|` over sampled `α`.
    pub affine_residual: Option<f64>,
    /// Residual of fresh samples against an affine map fitted on `D+1` interior points.
    pub fit_residual: Option<f64>,
    pub fold_delta: Option<f64>,
    pub layer_margins: Vec<LayerMargin>,
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Certificate {
    /// Largest of the two sampling residuals.
    pub fn residual(&self) -> Option<f64> {
        match (self.affine_residual, self.fit_residual) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    fn inconclusive(opts: &CertifyOptions, note: String) -> Self {
        Self {
            status: Status::Inconclusive,
            passed: false,
            semantics: opts.semantics,
            tol: opts.tol,
            samples: opts.samples,
            sign_margin: None,
            affine_residual: None,
            fit_residual: None,
            fold_delta: None,
            layer_margins: Vec::new(),
            violations: Vec::new(),
            note: Some(note),
        }
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `rel_tol` times the largest entry of `a`.
fn solve<T: Scalar>(mut a: Matrix<T>, mut b: Matrix<T>, rel_tol: T) -> Option<Matrix<T>> {
    let n = a.rows();
    let scale = a.max_abs().max(T::min_positive_value());
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a.get(i, col).abs().partial_cmp(&a.get(j, col).abs()).unwrap())?;
        if a.get(pivot, col).abs() <= rel_tol * scale {
            return None;
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a.get(col, c);
                a.set(col, c, a.get(pivot, c));
                a.set(pivot, c, tmp);
            }
            for c in 0..b.cols() {
                let tmp = b.get(col, c);
                b.set(col, c, b.get(pivot, c));
                b.set(pivot, c, tmp);
            }
        }
        for r in col + 1..n {
            let factor = a.get(r, col) / a.get(col, col);
            for c in col..n {
                a.set(r, c, a.get(r, c) - factor * a.get(col, c));
            }
            for c in 0..b.cols() {
                b.set(r, c, b.get(r, c) - factor * b.get(col, c));
            }
        }
    }
    for col in (0..n).rev() {
        for c in 0..b.cols() {
            let mut acc = b.get(col, c);
            for k in col + 1..n {
                acc = acc - a.get(col, k) * b.get(k, c);
            }
            b.set(col, c, acc / a.get(col, col));
        }
    }
    Some(b)
}

fn with_ones<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut data = Vec::with_capacity(x.rows() * (x.cols() + 1));
    for row in x.row_iter() {
        data.extend_from_slice(row);
        data.push(T::one());
    }
    Matrix::from_raw(x.rows(), x.cols() + 1, data)
}

/// Certifies that the function selected by `opts.semantics` is affine on `region`.
pub fn certify_affine<T: Scalar>(
    net: &Network<T>,
    region: &Region<T>,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let d = region.dim();
    if region.dim() != net.input_dim() {
        return Err(Error::dims("certify_affine", region.vertices().shape(), net.layer(0).weights.shape()));
    }
    if opts.samples < d + 2 {
        return Ok(Certificate::inconclusive(
            opts,
            format!("{} samples requested, at least {} needed", opts.samples, d + 2),
        ));
    }
    let deployed = match opts.semantics {
        Semantics::Policed => fold_bias(net, region)?,
        Semantics::AsIs => net.clone(),
    };
    let margins = certify_sign_patterns(net, region, opts.semantics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    // Convex-combination identity.
    let alpha = region.sample_weights(opts.samples, &mut rng);
    let x = alpha.matmul(region.vertices())?;
    let at_vertices = deployed.forward(region.vertices())?;
    let combined = alpha.matmul(&at_vertices)?;
    let affine_residual = deployed.forward(&x)?.max_abs_diff(&combined).expect("same shape").as_f64();

    // Affine fit on D+1 interior points, checked on fresh samples.
    let mut fit = None;
    for _ in 0..FIT_ATTEMPTS {
        let pts = region.sample_with(d + 1, &mut rng);
        if let Some(theta) = solve(with_ones(&pts), deployed.forward(&pts)?, T::of(1e-10)) {
            fit = Some(theta);
            break;
        }
    }
    let Some(theta) = fit else {
        let mut cert = Certificate::inconclusive(
            opts,
            format!("affine fit stayed rank-deficient after {FIT_ATTEMPTS} resamples"),
        );
        cert.sign_margin = margins.min_margin;
        cert.affine_residual = Some(affine_residual);
        cert.layer_margins = margins.layers;
        cert.violations = margins.violations;
        return Ok(cert);
    };
    let fresh = region.sample_with(opts.samples, &mut rng);
    let predicted = with_ones(&fresh).matmul(&theta)?;
    let fit_residual = deployed.forward(&fresh)?.max_abs_diff(&predicted).expect("same shape").as_f64();

    let fold_delta = match opts.semantics {
        Semantics::Policed => certify_fold_equivalence(net, region, opts.probes, opts.seed ^ 0x5eed)?.max_delta,
        Semantics::AsIs => {
            let probes = probe_points(region, opts.probes, &mut rng);
            fold_bias(net, region)?
                .forward(&probes)?
                .max_abs_diff(&net.forward(&probes)?)
                .expect("same shape")
                .as_f64()
        }
    };

    let ok = |r: f64| r.is_finite() && r <= opts.tol;
    let passed = margins.passed && ok(affine_residual) && ok(fit_residual) && ok(fold_delta);
    Ok(Certificate {
        status: if passed { Status::Pass } else { Status::Fail },
        passed,
        semantics: opts.semantics,
        tol: opts.tol,
        samples: opts.samples,
        sign_margin: margins.min_margin,
        affine_residual: Some(affine_residual),
        fit_residual: Some(fit_residual),
        fold_delta: Some(fold_delta),
        layer_margins: margins.layers,
        violations: margins.violations,
        note: None,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TargetReport {
    /// `‖A − A*‖_∞` (largest absolute entry).
    pub slope_gap: f64,
    /// `‖b − b*‖_∞`.
    pub offset_gap: f64,
    pub passed: bool,
}

/// Compares the constrained network's affine piece on `region` with a target map.
pub fn certify_jacobian_target<T: Scalar>(
    net: &Network<T>,
    region: &Region<T>,
    slope: &Matrix<T>,
    offset: &[T],
    tol: f64,
) -> Result<TargetReport> {
    let piece = extract_affine(&fold_bias(net, region)?, region)?;
    if piece.slope.shape() != slope.shape() || piece.offset.len() != offset.len() {
        return Err(Error::dims("certify_jacobian_target", piece.slope.shape(), slope.shape()));
    }
    let slope_gap = piece.slope.max_abs_diff(slope).expect("same shape").as_f64();
    let offset_gap = piece
        .offset
        .iter()
        .zip(offset)
        .map(|(&a, &b)| (a - b).abs().as_f64())
        .fold(0.0, f64::max);
    Ok(TargetReport {
        slope_gap,
        offset_gap,
        passed: slope_gap <= tol && offset_gap <= tol,
    })
}
