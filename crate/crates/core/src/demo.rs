//! Synthetic 2-D data sets and the matching training presets.
//!
//! Both generators are fixed functions of the seed, so regenerated files are
//! byte-identical.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::region::Region;
use crate::train::{Dataset, LossKind, OptimizerKind, TrainConfig};

pub const CLASSIFICATION_POINTS: usize = 1000;
pub const REGRESSION_POINTS: usize = 2000;

/// Noise of the arcs before scaling.
const ARC_NOISE: f64 = 0.08;
const ARC_SCALE: f64 = 2.5;
const ARC_CENTRE: (f64, f64) = (0.5, 0.25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Two interleaved noisy arcs, 500 points each, labels 0 (upper arc) and 1.
pub fn classification(seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, ARC_NOISE).expect("valid std");
    let half = CLASSIFICATION_POINTS / 2;
    let mut inputs = Vec::with_capacity(2 * CLASSIFICATION_POINTS);
    let mut labels = Vec::with_capacity(CLASSIFICATION_POINTS);
    for i in 0..CLASSIFICATION_POINTS {
        let label = usize::from(i >= half);
        let t = PI * (i % half) as f64 / (half - 1) as f64;
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let x = x + noise.sample(&mut rng);
        let y = y + noise.sample(&mut rng);
        inputs.push(ARC_SCALE * (x - ARC_CENTRE.0));
        inputs.push(ARC_SCALE * (y - ARC_CENTRE.1));
        labels.push(label as f64);
    }
    Dataset::new(
        Matrix::new(CLASSIFICATION_POINTS, 2, inputs).expect("finite"),
        Matrix::column_vector(labels),
    )
    .expect("matching rows")
}

/// `sin(3r)·exp(−0.3r)` with `r = ‖(x, y)‖`.
pub fn regression_target(x: f64, y: f64) -> f64 {
    let r = x.hypot(y);
    (3.0 * r).sin() * (-0.3 * r).exp()
}

/// 2000 uniform points of `[−3, 3]²` with [`regression_target`] values.
pub fn regression(seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(2 * REGRESSION_POINTS);
    let mut targets = Vec::with_capacity(REGRESSION_POINTS);
    for _ in 0..REGRESSION_POINTS {
        let x = rng.random_range(-3.0..=3.0);
        let y = rng.random_range(-3.0..=3.0);
        inputs.extend([x, y]);
        targets.push(regression_target(x, y));
    }
    Dataset::new(
        Matrix::new(REGRESSION_POINTS, 2, inputs).expect("finite"),
        Matrix::column_vector(targets),
    )
    .expect("matching rows")
}

pub fn dataset(task: Task, seed: u64) -> Dataset<f64> {
    match task {
        Task::Classification => classification(seed),
        Task::Regression => regression(seed),
    }
}

/// Fraction of rows whose logit sign matches the 0/1 label.
pub fn accuracy(logits: &Matrix<f64>, labels: &Matrix<f64>) -> f64 {
    let hits = logits
        .data()
        .iter()
        .zip(labels.data())
        .filter(|&(&z, &t)| (z > 0.0) == (t > 0.5))
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Region shared by the presets: the box with corners `(−1, −1)` and `(1, 1)`.
pub fn preset_region() -> Region<f64> {
    Region::aligned_box(&[-1.0, -1.0], &[1.0, 1.0]).expect("valid box")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub activation: Activation<f64>,
    pub task: Task,
    pub config: TrainConfig,
}

pub const PRESET_NAMES: [&str; 3] = ["fig1", "fig2", "fig3"];

/// Training setups for the three 2-D demos.
///
/// * `fig1`: classification, `[2, 256, 256, 1]` leaky-ReLU, SGD with momentum.
/// * `fig2`: regression, `[2, 256, 256, 256, 1]` leaky-ReLU, Adam.
/// * `fig3`: `fig2` run for 10000 steps, snapshots at 5, 50 and 10000.
pub fn preset(name: &str) -> Result<Preset> {
    let leaky = Activation::default_leaky();
    match name {
        "fig1" => Ok(Preset {
            name: "fig1",
            dims: vec![2, 256, 256, 1],
            activation: leaky,
            task: Task::Classification,
            config: TrainConfig {
                steps: 2000,
                batch_size: 64,
                lr: 0.01,
                optimizer: OptimizerKind::Sgd { momentum: 0.9 },
                loss: LossKind::BceLogits,
                checkpoint_steps: vec![0, 5, 50, 500],
                ..TrainConfig::default()
            },
        }),
        "fig2" => Ok(Preset {
            name: "fig2",
            dims: vec![2, 256, 256, 256, 1],
            activation: leaky,
            task: Task::Regression,
            config: TrainConfig {
                steps: 5000,
                batch_size: 128,
                lr: 1e-3,
                optimizer: OptimizerKind::adam(),
                loss: LossKind::Mse,
                checkpoint_steps: vec![5, 50],
                ..TrainConfig::default()
            },
        }),
        "fig3" => {
            let mut p = preset("fig2")?;
            p.name = "fig3";
            p.config.steps = 10000;
            p.config.checkpoint_steps = vec![5, 50, 10000];
            Ok(p)
        }
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
