//! JSON checkpoints of identification models and their training state.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::identification::{IdentificationModel, Model, Scaling};
use crate::network::{NetworkModel, TrainingConfig};
use crate::operators::{CgroParams, RnnParams};
use crate::parametrization::GammaMode;
use crate::plant::dataset_io_error;
use crate::topology::{BlockDims, InterconnectionTopology};

pub const SCHEMA_VERSION: u32 = 1;

/// Recommended checkpoint file suffix.
pub const CHECKPOINT_SUFFIX: &str = ".netgain.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    /// Word position in the stream; a string because it can exceed 2^64.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyState {
    pub blocks: Vec<BlockDims>,
    pub coupling: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockState {
    pub a_hat: Vec<Vec<f64>>,
    pub b_hat: Vec<Vec<f64>>,
    pub c_hat: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_hat: Option<Vec<Vec<f64>>>,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelState {
    Networked {
        topology: TopologyState,
        radius: f64,
        gamma: GammaMode,
        blocks: Vec<BlockState>,
    },
    Rnn {
        w_x: Vec<Vec<f64>>,
        w_u: Vec<Vec<f64>>,
        b: Vec<f64>,
        w_y: Vec<Vec<f64>>,
        b_y: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub epoch: usize,
    pub model: ModelState,
    pub scaling: Scaling,
    pub input_rows: Vec<usize>,
    pub training: TrainingConfig,
    pub rng: RngState,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(what: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::shape(what, format!("{nrows}x{ncols}"), format!("{} rows", rows.len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(what: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::shape(what, len, v.len()));
    }
    Ok(DVector::from_column_slice(v))
}

impl ModelState {
    pub fn capture(model: &Model) -> Self {
        match model {
            Model::Networked(m) => ModelState::Networked {
                topology: TopologyState {
                    blocks: m.topology.blocks().to_vec(),
                    coupling: rows(m.topology.coupling()),
                },
                radius: m.radius,
                gamma: m.gamma,
                blocks: m
                    .blocks
                    .iter()
                    .zip(&m.z)
                    .map(|(b, &z)| BlockState {
                        a_hat: rows(&b.a_hat),
                        b_hat: rows(&b.b_hat),
                        c_hat: rows(&b.c_hat),
                        d_hat: b.d_hat.as_ref().map(rows),
                        z,
                    })
                    .collect(),
            },
            Model::Rnn(r) => ModelState::Rnn {
                w_x: rows(&r.w_x),
                w_u: rows(&r.w_u),
                b: r.b.iter().copied().collect(),
                w_y: rows(&r.w_y),
                b_y: r.b_y.iter().copied().collect(),
            },
        }
    }

    pub fn restore(&self) -> Result<Model> {
        match self {
            ModelState::Networked {
                topology,
                radius,
                gamma,
                blocks,
            } => {
                let t = InterconnectionTopology::from_rows(topology.blocks.clone(), &topology.coupling)?;
                if blocks.len() != t.len() {
                    return Err(Error::shape("checkpoint blocks", t.len(), blocks.len()));
                }
                let mut params = Vec::with_capacity(blocks.len());
                for (i, (s, d)) in blocks.iter().zip(t.blocks()).enumerate() {
                    params.push(CgroParams {
                        a_hat: matrix(&format!("A_hat of block {i}"), &s.a_hat, d.n, d.n)?,
                        b_hat: matrix(&format!("B_hat of block {i}"), &s.b_hat, d.n, d.m)?,
                        c_hat: matrix(&format!("C_hat of block {i}"), &s.c_hat, d.p, d.n)?,
                        d_hat: s
                            .d_hat
                            .as_ref()
                            .map(|r| matrix(&format!("D_hat of block {i}"), r, d.p, d.m))
                            .transpose()?,
                    });
                }
                let z = blocks.iter().map(|b| b.z).collect();
                Ok(Model::Networked(NetworkModel::new(t, params, z, *gamma, *radius)?))
            }
            ModelState::Rnn { w_x, w_u, b, w_y, b_y } => {
                let n = w_x.len();
                let m = w_u.first().map_or(0, Vec::len);
                let p = w_y.len();
                Ok(Model::Rnn(RnnParams {
                    w_x: matrix("W_x", w_x, n, n)?,
                    w_u: matrix("W_u", w_u, n, m)?,
                    b: vector("b", b, n)?,
                    w_y: matrix("W_y", w_y, p, n)?,
                    b_y: vector("b_y", b_y, p)?,
                }))
            }
        }
    }
}

impl Checkpoint {
    pub fn new(model: &IdentificationModel, training: &TrainingConfig, epoch: usize, rng: RngState) -> Self {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            epoch,
            model: ModelState::capture(&model.model),
            scaling: model.scaling.clone(),
            input_rows: model.input_rows.clone(),
            training: training.clone(),
            rng,
        }
    }

    pub fn identification_model(&self) -> Result<IdentificationModel> {
        IdentificationModel::new(self.model.restore()?, self.scaling.clone(), self.input_rows.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Domain(format!("cannot serialize checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parse_error = |e: serde_json::Error| Error::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        };
        let value: Value = serde_json::from_str(text).map_err(parse_error)?;
        let found = value.get("schema_version").and_then(Value::as_u64).ok_or_else(|| Error::Parse {
            offset: 0,
            message: "missing integer field `schema_version`".into(),
        })?;
        if found != u64::from(SCHEMA_VERSION) {
            return Err(Error::Migration {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            });
        }
        serde_json::from_str(text).map_err(parse_error)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| dataset_io_error(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| dataset_io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| dataset_io_error(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }
}

/// Byte offset of a 1-based `(line, column)` position; column 0 means the
/// position just before the line's first byte.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}
