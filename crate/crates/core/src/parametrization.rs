//! Free maps from unconstrained parameters to storage weights and
//! sub-operator gains.
//!
//! For every real `z_i` and every `gamma_M > 0` the allocation satisfies
//!
//! ```text
//! alpha_i            = 1 + colmax_i + z_i^2
//! alpha_i * gamma_i^2 = gamma_M^2 / (rowmax_i * gamma_M^2 + 1)
//! ```
//!
//! which places every Gershgorin disc of the Schur-form certificate in the
//! closed right half-plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::InterconnectionTopology;

/// Lower bound applied to a trainable network gain `z_M^2`.
pub const GAMMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GammaMode {
    Fixed { gamma_m: f64 },
    Trainable { z_m: f64 },
}

impl GammaMode {
    /// The network gain target actually used by the allocation.
    pub fn effective_gamma(&self) -> f64 {
        match *self {
            GammaMode::Fixed { gamma_m } => gamma_m,
            GammaMode::Trainable { z_m } => gamma_from_free(z_m).max(GAMMA_FLOOR),
        }
    }

    /// `d gamma_M / d z_M`; zero for a fixed gain and on the floor.
    pub fn gamma_derivative(&self) -> f64 {
        match *self {
            GammaMode::Fixed { .. } => 0.0,
            GammaMode::Trainable { z_m } if gamma_from_free(z_m) > GAMMA_FLOOR => 2.0 * z_m,
            GammaMode::Trainable { .. } => 0.0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, GammaMode::Trainable { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeGainParams {
    pub z: Vec<f64>,
    pub gamma_mode: GammaMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainAllocation {
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub gamma_m: f64,
}

pub fn alpha_from_z(t: &InterconnectionTopology, i: usize, z: f64) -> Result<f64> {
    Ok(1.0 + t.max_col_abs_sum(i)? + z * z)
}

/// Gain assigned to sub-operator `i` for free parameter `z` and network gain `gamma_m`.
pub fn nu(t: &InterconnectionTopology, i: usize, z: f64, gamma_m: f64) -> Result<f64> {
    if !(gamma_m > 0.0) || !gamma_m.is_finite() {
        return Err(Error::Domain(format!("network gain must be positive and finite, got {gamma_m}")));
    }
    let alpha = alpha_from_z(t, i, z)?;
    let row = t.max_row_abs_sum(i)?;
    let g2 = gamma_m * gamma_m;
    Ok((g2 / (alpha * (row * g2 + 1.0))).sqrt())
}

/// `d gamma_i / d z_i` and `d gamma_i / d gamma_M` at the given point.
pub fn nu_partials(t: &InterconnectionTopology, i: usize, z: f64, gamma_m: f64) -> Result<(f64, f64)> {
    let gamma = nu(t, i, z, gamma_m)?;
    let alpha = alpha_from_z(t, i, z)?;
    let row = t.max_row_abs_sum(i)?;
    let d_z = -gamma * z / alpha;
    let d_gm = gamma / (gamma_m * (row * gamma_m * gamma_m + 1.0));
    Ok((d_z, d_gm))
}

pub fn gamma_from_free(z_m: f64) -> f64 {
    z_m * z_m
}

pub fn allocate_gains(t: &InterconnectionTopology, params: &FreeGainParams) -> Result<GainAllocation> {
    if params.z.len() != t.len() {
        return Err(Error::shape("free gain parameters z", t.len(), params.z.len()));
    }
    crate::error::ensure_finite("free gain parameters z", &params.z)?;
    let gamma_m = params.gamma_mode.effective_gamma();
    let mut alphas = Vec::with_capacity(t.len());
    let mut gammas = Vec::with_capacity(t.len());
    for (i, &z) in params.z.iter().enumerate() {
        alphas.push(alpha_from_z(t, i, z)?);
        gammas.push(nu(t, i, z, gamma_m)?);
    }
    Ok(GainAllocation { alphas, gammas, gamma_m })
}

impl GainAllocation {
    /// Checks both allocation inequalities with relative slack `tol`.
    pub fn satisfies_invariants(&self, t: &InterconnectionTopology, tol: f64) -> bool {
        let g2 = self.gamma_m * self.gamma_m;
        (0..t.len()).all(|i| {
            let col = t.max_col_abs_sum(i).unwrap();
            let row = t.max_row_abs_sum(i).unwrap();
            let a = self.alphas[i];
            let ag2 = a * self.gammas[i] * self.gammas[i];
            let bound = g2 / (row * g2 + 1.0);
            a >= (1.0 + col) * (1.0 - tol) && ag2 > 0.0 && ag2 <= bound * (1.0 + tol)
        })
    }
}
