//! Interconnection structure of a networked operator.
//!
//! Sub-operator `i` reads the input block `u_i` and writes the output block
//! `y_i`. The coupling matrix `M` routes stacked outputs back to stacked
//! inputs, `u = M y + d`, and the performance output is `e = y`.
//!
//! All indices on this surface are 0-based.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths of one sub-operator: inputs `m`, outputs `p`, states `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub m: usize,
    pub p: usize,
    #[serde(default)]
    pub n: usize,
}

impl BlockDims {
    pub fn new(m: usize, p: usize, n: usize) -> Self {
        BlockDims { m, p, n }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterconnectionTopology {
    blocks: Vec<BlockDims>,
    coupling: DMatrix<f64>,
    input_offsets: Vec<usize>,
    output_offsets: Vec<usize>,
}

impl InterconnectionTopology {
    /// Validates block widths against the coupling matrix `M` (shape `m x p`).
    pub fn new(blocks: Vec<BlockDims>, coupling: DMatrix<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Domain("topology needs at least one sub-operator".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.m == 0 || b.p == 0 {
                return Err(Error::Domain(format!(
                    "sub-operator {i} has zero input or output width (m={}, p={})",
                    b.m, b.p
                )));
            }
        }
        let input_offsets = prefix_sums(blocks.iter().map(|b| b.m));
        let output_offsets = prefix_sums(blocks.iter().map(|b| b.p));
        let m = *input_offsets.last().unwrap();
        let p = *output_offsets.last().unwrap();
        if coupling.nrows() != m || coupling.ncols() != p {
            return Err(Error::shape(
                "coupling matrix M",
                format!("{m}x{p}"),
                format!("{}x{}", coupling.nrows(), coupling.ncols()),
            ));
        }
        for r in 0..m {
            for c in 0..p {
                if !coupling[(r, c)].is_finite() {
                    return Err(Error::non_finite("coupling matrix M", format!("({r}, {c})")));
                }
            }
        }
        Ok(InterconnectionTopology {
            blocks,
            coupling,
            input_offsets,
            output_offsets,
        })
    }

    /// Builds the topology from a row-major array of rows.
    pub fn from_rows(blocks: Vec<BlockDims>, rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != ncols) {
            return Err(Error::shape(format!("row {r} of coupling matrix M"), ncols, row.len()));
        }
        let coupling = DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]);
        Self::new(blocks, coupling)
    }

    /// The coupling of the three-tank benchmark: tank 1 reads tank 3 and the
    /// external pump, tank 2 reads tank 1, tank 3 reads tank 2.
    pub fn three_tank(state_dim: usize) -> Self {
        let blocks = vec![
            BlockDims::new(2, 1, state_dim),
            BlockDims::new(1, 1, state_dim),
            BlockDims::new(1, 1, state_dim),
        ];
        let rows = [
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        Self::from_rows(blocks, &rows).expect("three-tank topology is well formed")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[BlockDims] {
        &self.blocks
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// Total input width `m`.
    pub fn input_width(&self) -> usize {
        *self.input_offsets.last().unwrap()
    }

    /// Total output width `p`.
    pub fn output_width(&self) -> usize {
        *self.output_offsets.last().unwrap()
    }

    pub fn state_width(&self) -> usize {
        self.blocks.iter().map(|b| b.n).sum()
    }

    /// Rows of `M` that feed sub-operator `i`.
    pub fn input_index_set(&self, i: usize) -> Result<Range<usize>> {
        self.check_index(i)?;
        Ok(self.input_offsets[i]..self.input_offsets[i + 1])
    }

    /// Columns of `M` carrying the outputs of sub-operator `i`.
    pub fn output_index_set(&self, i: usize) -> Result<Range<usize>> {
        self.check_index(i)?;
        Ok(self.output_offsets[i]..self.output_offsets[i + 1])
    }

    /// Range of sub-operator `i` inside the stacked state vector.
    pub fn state_index_set(&self, i: usize) -> Result<Range<usize>> {
        self.check_index(i)?;
        let start: usize = self.blocks[..i].iter().map(|b| b.n).sum();
        Ok(start..start + self.blocks[i].n)
    }

    /// `max_{j in outputs(i)} sum_k |M_kj|`: the largest absolute column sum
    /// over the columns owned by sub-operator `i`.
    pub fn max_col_abs_sum(&self, i: usize) -> Result<f64> {
        let cols = self.output_index_set(i)?;
        Ok(cols
            .map(|j| self.coupling.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max))
    }

    /// `max_{j in inputs(i)} sum_k |M_jk|`: the largest absolute row sum over
    /// the rows owned by sub-operator `i`.
    pub fn max_row_abs_sum(&self, i: usize) -> Result<f64> {
        let rows = self.input_index_set(i)?;
        Ok(rows
            .map(|j| self.coupling.row(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max))
    }

    /// True when some entry of `M` routes an output of `from` into an input of `to`.
    pub fn couples(&self, from: usize, to: usize) -> Result<bool> {
        let rows = self.input_index_set(to)?;
        let cols = self.output_index_set(from)?;
        Ok(rows
            .flat_map(|r| cols.clone().map(move |c| (r, c)))
            .any(|(r, c)| self.coupling[(r, c)] != 0.0))
    }

    /// Row-major copy of `M`, as stored in configs and checkpoints.
    pub fn coupling_rows(&self) -> Vec<Vec<f64>> {
        self.coupling
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Same blocks and coupling with every state width replaced.
    pub fn with_state_dims(&self, dims: &[usize]) -> Result<Self> {
        if dims.len() != self.len() {
            return Err(Error::shape("state widths", self.len(), dims.len()));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(dims)
            .map(|(b, &n)| BlockDims::new(b.m, b.p, n))
            .collect();
        Self::new(blocks, self.coupling.clone())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.blocks.len() {
            Err(Error::Index {
                index: i,
                len: self.blocks.len(),
            })
        } else {
            Ok(())
        }
    }
}

fn prefix_sums(widths: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for w in widths {
        out.push(out.last().unwrap() + w);
    }
    out
}
