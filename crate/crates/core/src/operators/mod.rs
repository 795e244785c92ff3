//! Sub-operator abstraction and the concrete operator families.

mod cgro;
mod rnn;

pub use cgro::{CgroGrads, CgroParams, CgroRealized, DEFAULT_CONTRACTION_RADIUS};
pub use rnn::{RnnGrads, RnnParams};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::topology::BlockDims;

/// One recurrent block `x+ = f(x, u)`, `y = h(x, u)`.
pub trait SubOperator {
    fn dims(&self) -> BlockDims;

    fn has_feedthrough(&self) -> bool;

    /// Incremental L2 gain guaranteed by construction, if any.
    fn assigned_gain(&self) -> Option<f64>;

    /// Output at `state`. Operators without feedthrough ignore `u`; those
    /// with feedthrough require it.
    fn output(&self, state: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<DVector<f64>>;

    fn advance(&self, state: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn step(&self, state: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let y = self.output(state, Some(u))?;
        Ok((self.advance(state, u)?, y))
    }
}

impl<T: SubOperator + ?Sized> SubOperator for Box<T> {
    fn dims(&self) -> BlockDims {
        (**self).dims()
    }
    fn has_feedthrough(&self) -> bool {
        (**self).has_feedthrough()
    }
    fn assigned_gain(&self) -> Option<f64> {
        (**self).assigned_gain()
    }
    fn output(&self, state: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        (**self).output(state, u)
    }
    fn advance(&self, state: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).advance(state, u)
    }
}

/// Anything that maps an initial state and an input sequence to an output sequence.
pub trait SequenceOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn rollout(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>>;
}

impl<T: SubOperator> SequenceOperator for T {
    fn input_dim(&self) -> usize {
        self.dims().m
    }
    fn output_dim(&self) -> usize {
        self.dims().p
    }
    fn state_dim(&self) -> usize {
        self.dims().n
    }
    fn rollout(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        check_len("initial state", x0, self.dims().n)?;
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(inputs.len());
        for u in inputs {
            let (next, y) = self.step(&x, u)?;
            out.push(y);
            x = next;
        }
        Ok(out)
    }
}

/// Memoryless linear map `y = K u` with direct feedthrough.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticMap {
    pub gain: DMatrix<f64>,
}

impl StaticMap {
    pub fn new(gain: DMatrix<f64>) -> Self {
        StaticMap { gain }
    }
}

impl SubOperator for StaticMap {
    fn dims(&self) -> BlockDims {
        BlockDims::new(self.gain.ncols(), self.gain.nrows(), 0)
    }
    fn has_feedthrough(&self) -> bool {
        true
    }
    fn assigned_gain(&self) -> Option<f64> {
        None
    }
    fn output(&self, _state: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let u = u.ok_or_else(|| Error::Domain("static map needs its input to produce an output".into()))?;
        check_len("input", u, self.gain.ncols())?;
        ensure_finite("input", u.as_slice())?;
        Ok(&self.gain * u)
    }
    fn advance(&self, _state: &DVector<f64>, _u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }
}

pub(crate) fn check_len(what: &str, v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        Err(Error::shape(what, expected, v.len()))
    } else {
        Ok(())
    }
}
