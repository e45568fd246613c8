use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use super::Trainer;
use crate::error::{Error, Result};
use crate::io::ModelFile;
use crate::matrix::Matrix;
use crate::net::Network;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockFile {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BlockFile {
    fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|x| x.as_f64()).collect(),
        }
    }

    fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        Matrix::new(self.rows, self.cols, self.data.iter().map(|&x| T::of(x)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerFile {
    kind: OptimizerKind,
    t: u64,
    first: Vec<BlockFile>,
    second: Vec<BlockFile>,
}

/// Network and optimizer state at a step boundary.
///
/// JSON: `{"version":1,"step":..,"model":{..},"optimizer":{"kind":..,"t":..,"first":[..],"second":[..]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    step: usize,
    model: ModelFile,
    optimizer: OptimizerFile,
}

impl Checkpoint {
    pub(super) fn capture<T: Scalar>(trainer: &Trainer<T>) -> Self {
        let opt = trainer.optimizer();
        Self {
            version: CHECKPOINT_VERSION,
            step: trainer.step_count(),
            model: ModelFile::from_network(trainer.net()),
            optimizer: OptimizerFile {
                kind: opt.kind,
                t: opt.t,
                first: opt.first.iter().map(BlockFile::from_matrix).collect(),
                second: opt.second.iter().map(BlockFile::from_matrix).collect(),
            },
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        self.model.clone().into_network()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::Validation(format!(
                    "checkpoint version {v} is not supported (expected {CHECKPOINT_VERSION})"
                )))
            }
            None => return Err(Error::parse("version", "missing or not an integer")),
        }
        serde_json::from_value(value).map_err(|e| Error::parse("$", e.to_string()))
    }

    pub(super) fn restore_into<T: Scalar>(&self, trainer: &mut Trainer<T>) -> Result<()> {
        let net: Network<T> = self.network()?;
        if net.dims() != trainer.net.dims() {
            return Err(Error::Validation(format!(
                "checkpoint network has layer sizes {:?}, expected {:?}",
                net.dims(),
                trainer.net.dims()
            )));
        }
        if self.optimizer.kind != trainer.optimizer.kind {
            return Err(Error::Config(format!(
                "checkpoint optimizer {:?} differs from configured {:?}",
                self.optimizer.kind, trainer.optimizer.kind
            )));
        }
        let params = net.params();
        let load = |blocks: &[BlockFile], what: &str| -> Result<Vec<Matrix<T>>> {
            let mats = blocks.iter().map(|b| b.to_matrix()).collect::<Result<Vec<_>>>()?;
            let fits = mats.is_empty()
                || (mats.len() == params.len() && mats.iter().zip(&params).all(|(m, p)| m.shape() == p.shape()));
            if !fits {
                return Err(Error::Validation(format!("checkpoint {what} buffers do not match the network")));
            }
            Ok(mats)
        };
        let first = load(&self.optimizer.first, "first-moment")?;
        let second = load(&self.optimizer.second, "second-moment")?;
        trainer.net = net;
        trainer.optimizer.t = self.optimizer.t;
        trainer.optimizer.first = first;
        trainer.optimizer.second = second;
        trainer.step = self.step;
        Ok(())
    }
}
