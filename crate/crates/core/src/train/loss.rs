use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error over every entry.
    #[default]
    Mse,
    /// Mean binary cross-entropy on raw logits, targets in `{0, 1}`.
    BceLogits,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::BceLogits => "bce_logits",
        }
    }
}

/// Records the task loss of `pred` against `targets`.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, kind: LossKind, pred: Var, targets: &Matrix<T>) -> Result<Var> {
    match kind {
        LossKind::Mse => {
            if tape.value(pred).shape() != targets.shape() {
                return Err(Error::dims("mse", tape.value(pred).shape(), targets.shape()));
            }
            let t = tape.constant(targets.clone());
            let diff = tape.sub(pred, t)?;
            Ok(tape.mean_square(diff))
        }
        LossKind::BceLogits => tape.bce_with_logits(pred, targets),
    }
}

/// Plain evaluation of [`loss`] without a tape.
pub fn loss_value<T: Scalar>(kind: LossKind, pred: &Matrix<T>, targets: &Matrix<T>) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let l = loss(&mut tape, kind, p, targets)?;
    Ok(tape.scalar(l))
}
