//! Three-tank plant: continuous dynamics, forward-Euler simulation and
//! identification datasets.

mod dataset;

pub(crate) use dataset::io_err as dataset_io_error;
pub use dataset::{generate_dataset, DatasetConfig, PlantDataset, PlantSequence, DATASET_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub type Levels = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankParams {
    /// Tank cross-sections in cm².
    pub area: [f64; 3],
    /// Outlet cross-sections in cm².
    pub outlet: [f64; 3],
    /// Fraction of each outflow routed to the next tank.
    pub k: [f64; 3],
    pub k_c: f64,
    /// Gravity in cm/s².
    pub g: f64,
    /// Sampling time in seconds.
    pub ts: f64,
}

impl TankParams {
    pub fn table1() -> Self {
        TankParams {
            area: [38.0, 32.0, 21.0],
            outlet: [0.05, 0.03, 0.06],
            k: [0.32, 0.23, 0.52],
            k_c: 50.0,
            g: 981.0,
            ts: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.area.iter().chain(&self.outlet).chain(&self.k).chain([&self.k_c, &self.g, &self.ts]);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Domain("tank parameters must be finite".into()));
        }
        if self.area.iter().chain(&self.outlet).any(|&v| v <= 0.0) {
            return Err(Error::Domain("tank and outlet areas must be positive".into()));
        }
        if self.k.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("flow fractions must lie in [0, 1]".into()));
        }
        if self.ts <= 0.0 || self.g <= 0.0 {
            return Err(Error::Domain("sampling time and gravity must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TankParams {
    fn default() -> Self {
        Self::table1()
    }
}

/// Right-hand side of the tank dynamics, with levels clamped at zero inside
/// the square roots.
pub fn tank_derivative(h: &Levels, v: f64, p: &TankParams) -> Result<Levels> {
    ensure_finite("tank levels", h)?;
    ensure_finite("pump input", &[v])?;
    let q = |i: usize| p.outlet[i] * (2.0 * p.g * h[i].max(0.0)).sqrt();
    let (q1, q2, q3) = (q(0), q(1), q(2));
    Ok([
        (-q1 + p.k[0] * q3 + p.k_c * v) / p.area[0],
        (-q2 + p.k[1] * q1) / p.area[1],
        (-q3 + p.k[2] * q2) / p.area[2],
    ])
}

/// Forward-Euler rollout; returns `h(0), ..., h(T)` for `T = v.len()`.
pub fn simulate_tanks(h0: &Levels, v: &[f64], p: &TankParams) -> Result<Vec<Levels>> {
    if h0.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain(format!("initial levels must be nonnegative, got {h0:?}")));
    }
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut h = *h0;
    out.push(h);
    for &vt in v {
        let dh = tank_derivative(&h, vt, p)?;
        for i in 0..3 {
            h[i] = (h[i] + p.ts * dh[i]).max(0.0);
        }
        ensure_finite("simulated levels", &h)?;
        out.push(h);
    }
    Ok(out)
}
