//! Training under the region constraint.
//!
//! Every step runs the constrained forward pass on a mini-batch, so the network
//! is affine on the region after every update, not just at the end.

mod checkpoint;
mod loss;
mod optim;
mod penalty;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use loss::{loss, loss_value, LossKind};
pub use optim::{Optimizer, OptimizerKind};
pub use penalty::{affine_target_penalty, AffineTarget, AffineTargetSpec, PENALTY_REL_STEP};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::Network;
use crate::police::record_police;
use crate::region::Region;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::verify::{certify_affine, Certificate, CertifyOptions, Semantics};

/// Training hyperparameters. Every field has a default, so `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer updates to run (default 1000).
    pub steps: usize,
    /// Rows per mini-batch; the full data set when it has fewer rows (default 64).
    pub batch_size: usize,
    /// Learning rate (default 1e-3).
    pub lr: f64,
    /// Default: adam with β1 0.9, β2 0.999, ε 1e-8.
    pub optimizer: OptimizerKind,
    /// Coefficient λ of the `λ/2 ‖θ‖²` term (default 0).
    pub weight_decay: f64,
    pub seed: u64,
    /// Default: mse.
    pub loss: LossKind,
    /// Steps after which a snapshot is certified; the final step always is (default [5, 50]).
    pub checkpoint_steps: Vec<usize>,
    /// Samples per checkpoint certificate (default 1000).
    pub certify_samples: usize,
    /// Residual tolerance of checkpoint certificates (default 1e-6).
    pub certify_tol: f64,
    /// Optional affine target added to the task loss.
    pub penalty: Option<AffineTargetSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 64,
            lr: 1e-3,
            optimizer: OptimizerKind::adam(),
            weight_decay: 0.0,
            seed: 0,
            loss: LossKind::Mse,
            checkpoint_steps: vec![5, 50],
            certify_samples: 1000,
            certify_tol: crate::verify::DEFAULT_TOL,
            penalty: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight_decay {} must be non-negative", self.weight_decay)));
        }
        if self.certify_tol.is_nan() || self.certify_tol <= 0.0 {
            return Err(Error::Config(format!("certify_tol {} must be positive", self.certify_tol)));
        }
        self.optimizer.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Inputs (`N × D`) paired with targets (`N × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Matrix<T>,
    pub targets: Matrix<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Matrix<T>, targets: Matrix<T>) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::dims("dataset", inputs.shape(), targets.shape()));
        }
        if inputs.is_empty() {
            return Err(Error::Validation("dataset is empty".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(rows),
            targets: self.targets.select_rows(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Task loss plus penalty plus `λ/2 ‖θ‖²`, before the update.
    pub loss: f64,
    pub certificate_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    /// Updates applied before the snapshot was taken.
    pub step: usize,
    pub net: Network<T>,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, Default)]
pub struct History<T> {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot<T>>,
}

impl<T> History<T> {
    /// `step,loss,certificate_residual`, one row per step; the residual is blank off checkpoints.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,certificate_residual\n");
        for r in &self.records {
            let res = r.certificate_residual.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.step, r.loss, res));
        }
        out
    }

    pub fn all_certified(&self) -> bool {
        self.snapshots.iter().all(|s| s.certificate.passed)
    }
}

/// Training state: network, optimizer and step counter.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    net: Network<T>,
    region: Region<T>,
    config: TrainConfig,
    optimizer: Optimizer<T>,
    target: Option<AffineTarget<T>>,
    step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: Network<T>, region: Region<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if region.dim() != net.input_dim() {
            return Err(Error::dims("trainer region", region.vertices().shape(), net.layer(0).weights.shape()));
        }
        let target = match &config.penalty {
            Some(spec) => {
                let t = spec.build(&region)?;
                t.validate_for(&net, &region)?;
                Some(t)
            }
            None => None,
        };
        let optimizer = Optimizer::new(config.optimizer, config.lr, config.weight_decay)?;
        Ok(Self {
            net,
            region,
            config,
            optimizer,
            target,
            step: 0,
        })
    }

    pub fn net(&self) -> &Network<T> {
        &self.net
    }

    pub fn into_net(self) -> Network<T> {
        self.net
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &Optimizer<T> {
        &self.optimizer
    }

    /// Updates applied so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    fn batch(&self, data: &Dataset<T>) -> Dataset<T> {
        let n = data.len();
        if self.config.batch_size >= n {
            return data.clone();
        }
        // one stream per step, so a resumed run draws the same batches
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step as u64);
        let rows = index::sample(&mut rng, n, self.config.batch_size).into_vec();
        data.select(&rows)
    }

    /// Objective at the current parameters on `batch`, with its gradients.
    pub fn objective(&self, batch: &Dataset<T>) -> Result<(T, Vec<Matrix<T>>)> {
        let mut tape = Tape::new();
        let vars = self.net.attach(&mut tape);
        let x = tape.constant(batch.inputs.clone());
        let (out, _) = record_police(&mut tape, &self.net, &vars, x, &self.region)?;
        let mut total = loss(&mut tape, self.config.loss, out, &batch.targets)?;
        if let Some(target) = &self.target {
            let pen = affine_target_penalty(&mut tape, &self.net, &vars, &self.region, target)?;
            total = tape.add(total, pen)?;
        }
        let grads = tape.backward(total)?;
        let grads = vars
            .all()
            .into_iter()
            .map(|v| grads.get_or_zeros(v, tape.value(v).shape()))
            .collect();
        let decay = self.optimizer.weight_decay * self.net.param_norm_sq() / T::of(2.0);
        Ok((tape.scalar(total) + decay, grads))
    }

    /// One optimizer update on a fresh mini-batch; returns the objective before the update.
    pub fn step_once(&mut self, data: &Dataset<T>) -> Result<T> {
        if data.inputs.cols() != self.net.input_dim() || data.targets.cols() != self.net.output_dim() {
            return Err(Error::dims(
                "training data",
                (data.inputs.cols(), data.targets.cols()),
                (self.net.input_dim(), self.net.output_dim()),
            ));
        }
        let batch = self.batch(data);
        let (value, grads) = self.objective(&batch)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        let mut params = self.net.params();
        self.optimizer.step(&mut params, &grads)?;
        self.net = self.net.with_params(&params)?;
        self.step += 1;
        Ok(value)
    }

    /// Certificate of the current network, seeded by the step count.
    pub fn certify(&self) -> Result<Certificate> {
        let opts = CertifyOptions {
            samples: self.config.certify_samples,
            tol: self.config.certify_tol,
            seed: self.config.seed ^ (self.step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            probes: 100,
            semantics: Semantics::Policed,
        };
        certify_affine(&self.net, &self.region, &opts)
    }

    fn snapshot(&self) -> Result<Snapshot<T>> {
        Ok(Snapshot {
            step: self.step,
            net: self.net.clone(),
            certificate: self.certify()?,
        })
    }

    /// Runs until `config.steps` updates have been applied in total.
    pub fn run(&mut self, data: &Dataset<T>) -> Result<History<T>> {
        let total = self.config.steps;
        let mut history = History {
            records: Vec::with_capacity(total.saturating_sub(self.step)),
            snapshots: Vec::new(),
        };
        if self.config.checkpoint_steps.contains(&0) && self.step == 0 {
            history.snapshots.push(self.snapshot()?);
        }
        while self.step < total {
            let value = self.step_once(data)?;
            let mut record = StepRecord {
                step: self.step,
                loss: value.as_f64(),
                certificate_residual: None,
            };
            if self.step == total || self.config.checkpoint_steps.contains(&self.step) {
                let snap = self.snapshot()?;
                log::info!(
                    "step {}: loss {:.6e}, certificate {:?}",
                    self.step,
                    record.loss,
                    snap.certificate.status
                );
                record.certificate_residual = snap.certificate.residual();
                history.snapshots.push(snap);
            }
            history.records.push(record);
        }
        Ok(history)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }

    /// Replaces network and optimizer state with a checkpoint's.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_into(self)
    }
}

/// Trains a copy of `net` and returns it with the run's history.
pub fn train_loop<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    region: &Region<T>,
    config: &TrainConfig,
) -> Result<(Network<T>, History<T>)> {
    let mut trainer = Trainer::new(net.clone(), region.clone(), config.clone())?;
    let history = trainer.run(data)?;
    Ok((trainer.into_net(), history))
}
