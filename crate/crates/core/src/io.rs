//! JSON model and region files.
//!
//! Model: `{"layers":[{"w":[[..]],"b":[..],"act":"leaky_relu","alpha":0.01}]}` with
//! weight rows indexed by output unit. Region: `{"vertices":[[..],..]}`.
//! Floats are written in shortest round-trip form, so every value survives a
//! save/load cycle exactly.

use serde::{Deserialize, Serialize};

use crate::activation::{Activation, DEFAULT_LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{Layer, Network};
use crate::region::Region;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelFile {
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionFile {
    vertices: Vec<Vec<f64>>,
}

impl ModelFile {
    pub(crate) fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerFile {
                w: l.weights.row_iter().map(|r| r.iter().map(|x| x.as_f64()).collect()).collect(),
                b: l.bias.iter().map(|x| x.as_f64()).collect(),
                act: l.activation.name().to_string(),
                alpha: match l.activation {
                    Activation::LeakyRelu(a) => Some(a.as_f64()),
                    _ => None,
                },
            })
            .collect();
        Self { layers }
    }

    pub(crate) fn into_network<T: Scalar>(self) -> Result<Network<T>> {
        if self.layers.is_empty() {
            return Err(Error::parse("layers", "model has no layers"));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, lf) in self.layers.into_iter().enumerate() {
            let at = |field: &str| format!("layers[{i}].{field}");
            let cols = lf.w.first().map_or(0, Vec::len);
            if lf.w.is_empty() || cols == 0 {
                return Err(Error::parse(at("w"), "weight matrix is empty"));
            }
            if let Some(r) = lf.w.iter().position(|row| row.len() != cols) {
                return Err(Error::parse(
                    format!("layers[{i}].w[{r}]"),
                    format!("row has {} entries, expected {cols}", lf.w[r].len()),
                ));
            }
            let activation = match lf.act.as_str() {
                "identity" => Activation::Identity,
                "relu" => Activation::Relu,
                "abs" => Activation::Abs,
                "leaky_relu" => {
                    let alpha = lf.alpha.unwrap_or_else(|| {
                        log::warn!("{} missing, using default slope {DEFAULT_LEAKY_SLOPE}", at("alpha"));
                        DEFAULT_LEAKY_SLOPE
                    });
                    Activation::leaky_relu(T::of(alpha)).map_err(|e| Error::parse(at("alpha"), e.to_string()))?
                }
                other => return Err(Error::parse(at("act"), format!("unknown activation {other:?}"))),
            };
            let weights = Matrix::new(
                lf.w.len(),
                cols,
                lf.w.iter().flatten().map(|&x| T::of(x)).collect(),
            )
            .map_err(|e| Error::parse(at("w"), e.to_string()))?;
            let bias = lf.b.iter().map(|&x| T::of(x)).collect();
            layers.push(Layer::new(weights, bias, activation).map_err(|e| Error::parse(at("b"), e.to_string()))?);
        }
        Network::new(layers).map_err(|e| Error::parse("layers", e.to_string()))
    }
}

pub fn model_to_json<T: Scalar>(net: &Network<T>) -> String {
    serde_json::to_string(&ModelFile::from_network(net)).expect("model serializes")
}

pub fn model_from_json<T: Scalar>(text: &str) -> Result<Network<T>> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    file.into_network()
}

pub fn region_to_json<T: Scalar>(region: &Region<T>) -> String {
    let file = RegionFile {
        vertices: region
            .vertices()
            .row_iter()
            .map(|r| r.iter().map(|x| x.as_f64()).collect())
            .collect(),
    };
    serde_json::to_string(&file).expect("region serializes")
}

/// Parses a region file; canonical simplex and box vertex sets get their kind back.
pub fn region_from_json<T: Scalar>(text: &str) -> Result<Region<T>> {
    let file: RegionFile = serde_json::from_str(text).map_err(|e| Error::parse("$", e.to_string()))?;
    let rows: Vec<Vec<T>> = file
        .vertices
        .iter()
        .map(|r| r.iter().map(|&x| T::of(x)).collect())
        .collect();
    Region::from_vertices(&rows)
        .map(Region::classify)
        .map_err(|e| Error::parse("vertices", e.to_string()))
}
