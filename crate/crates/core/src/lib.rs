//! Piecewise-affine MLPs constrained to be exactly affine on a convex polytope.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the CLI and the certificates use.

pub mod activation;
pub mod affine;
pub mod bench;
pub mod demo;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod matrix;
pub mod net;
pub mod police;
pub mod region;
pub mod scalar;
pub mod tape;
pub mod train;
pub mod verify;

pub use activation::Activation;
pub use affine::{extract_affine, jacobian_at, AffinePiece};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use net::{forward_standard, Layer, NetVars, Network};
pub use police::{compute_shift, fold_bias, forward_police, record_police, region_shift, LayerShift, Shift};
pub use region::{Region, RegionKind};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use train::{train_loop, AffineTarget, Dataset, History, LossKind, OptimizerKind, TrainConfig, Trainer};
pub use verify::{certify_affine, certify_fold_equivalence, certify_jacobian_target, certify_sign_patterns, Certificate, CertifyOptions, Semantics, Status};

pub type Mat = Matrix<f64>;
pub type Net = Network<f64>;
pub type Reg = Region<f64>;
pub type Piece = AffinePiece<f64>;

pub type Mat32 = Matrix<f32>;
pub type Net32 = Network<f32>;
pub type Reg32 = Region<f32>;
