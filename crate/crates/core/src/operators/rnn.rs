//! Uncertified baseline: `x+ = tanh(W_x x + W_u u + b)`, `y = W_y x + b_y`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::cgro::{push_row_major, read_row_major};
use super::{check_len, SubOperator};
use crate::error::{ensure_finite, Result};
use crate::topology::BlockDims;

#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    pub w_x: DMatrix<f64>,
    pub w_u: DMatrix<f64>,
    pub b: DVector<f64>,
    pub w_y: DMatrix<f64>,
    pub b_y: DVector<f64>,
}

pub type RnnGrads = RnnParams;

impl RnnParams {
    pub fn zeros(dims: BlockDims) -> Self {
        RnnParams {
            w_x: DMatrix::zeros(dims.n, dims.n),
            w_u: DMatrix::zeros(dims.n, dims.m),
            b: DVector::zeros(dims.n),
            w_y: DMatrix::zeros(dims.p, dims.n),
            b_y: DVector::zeros(dims.p),
        }
    }

    /// Gaussian weights with standard deviation `0.5 / sqrt(fan_in)`, zero biases.
    pub fn random<R: Rng + ?Sized>(dims: BlockDims, rng: &mut R) -> Self {
        let mut gauss = |rows: usize, cols: usize, fan_in: usize| {
            let normal = Normal::new(0.0, 0.5 / (fan_in.max(1) as f64).sqrt()).expect("finite std");
            DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
        };
        RnnParams {
            w_x: gauss(dims.n, dims.n, dims.n),
            w_u: gauss(dims.n, dims.m, dims.m),
            b: DVector::zeros(dims.n),
            w_y: gauss(dims.p, dims.n, dims.n),
            b_y: DVector::zeros(dims.p),
        }
    }

    pub fn len(&self) -> usize {
        self.w_x.len() + self.w_u.len() + self.b.len() + self.w_y.len() + self.b_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flattening in the order `W_x, W_u, b, W_y, b_y`.
    pub fn to_flat(&self, out: &mut Vec<f64>) {
        push_row_major(&self.w_x, out);
        push_row_major(&self.w_u, out);
        out.extend(self.b.iter());
        push_row_major(&self.w_y, out);
        out.extend(self.b_y.iter());
    }

    pub fn set_flat(&mut self, values: &[f64]) -> usize {
        let mut k = read_row_major(&mut self.w_x, values);
        k += read_row_major(&mut self.w_u, &values[k..]);
        let n = self.b.len();
        self.b.copy_from_slice(&values[k..k + n]);
        k += n;
        k += read_row_major(&mut self.w_y, &values[k..]);
        let p = self.b_y.len();
        self.b_y.copy_from_slice(&values[k..k + p]);
        k + p
    }

    /// Loss and gradients for one sequence from zero state. `loss_weight`
    /// multiplies every squared residual.
    pub fn loss_and_grad(&self, inputs: &[DVector<f64>], targets: &[DVector<f64>], loss_weight: f64, grads: &mut RnnGrads) -> f64 {
        let n = self.w_x.nrows();
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(DVector::zeros(n));
        let mut loss = 0.0;
        let mut residuals = Vec::with_capacity(inputs.len());
        for (t, u) in inputs.iter().enumerate() {
            let x = &states[t];
            let r = &self.w_y * x + &self.b_y - &targets[t];
            loss += loss_weight * r.norm_squared();
            residuals.push(r);
            let next = (&self.w_x * x + &self.w_u * u + &self.b).map(f64::tanh);
            states.push(next);
        }
        let mut lambda_next = DVector::zeros(n);
        for t in (0..inputs.len()).rev() {
            let gy = &residuals[t] * (2.0 * loss_weight);
            let x = &states[t];
            let x_next = &states[t + 1];
            let delta = lambda_next.component_mul(&x_next.map(|v| 1.0 - v * v));
            grads.w_y += &gy * x.transpose();
            grads.b_y += &gy;
            grads.w_x += &delta * x.transpose();
            grads.w_u += &delta * inputs[t].transpose();
            grads.b += &delta;
            lambda_next = self.w_y.transpose() * &gy + self.w_x.transpose() * &delta;
        }
        loss
    }
}

impl SubOperator for RnnParams {
    fn dims(&self) -> BlockDims {
        BlockDims::new(self.w_u.ncols(), self.w_y.nrows(), self.w_x.nrows())
    }

    fn has_feedthrough(&self) -> bool {
        false
    }

    fn assigned_gain(&self) -> Option<f64> {
        None
    }

    fn output(&self, state: &DVector<f64>, _u: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        check_len("state", state, self.w_x.nrows())?;
        ensure_finite("state", state.as_slice())?;
        Ok(&self.w_y * state + &self.b_y)
    }

    fn advance(&self, state: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", state, self.w_x.nrows())?;
        check_len("input", u, self.w_u.ncols())?;
        ensure_finite("state", state.as_slice())?;
        ensure_finite("input", u.as_slice())?;
        Ok((&self.w_x * state + &self.w_u * u + &self.b).map(f64::tanh))
    }
}
