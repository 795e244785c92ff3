//! Certified-gain recurrent operator (CGRO).
//!
//! Dynamics: `x+ = A tanh(x) + B u`, `y = s (C tanh(x) + D u)`.
//!
//! The free matrices `(A^, B^, C^, D^)` are mapped to a realization whose
//! incremental L2 gain is at most the assigned `gamma`:
//!
//! 1. `A = r A^ / sqrt(|A^|_F^2 + 1)`, so `|A|_2 <= |A|_F = a0 < r < 1`.
//! 2. With `V = |dx|^2`, Young's inequality and the 1-Lipschitz `tanh` give
//!    `|dx+|^2 <= (1+c) a0^2 |dx|^2 + (1+1/c) |B|^2 |du|^2`.
//!    Choosing `c = (1 - a0^2) / (2 a0^2 + eps)` makes `rho = (1+c) a0^2 < 1`.
//! 3. Summing from `dx(0) = 0`: `sum |dx|^2 <= (1+1/c)|B|^2 / (1-rho) sum |du|^2`.
//! 4. The triangle inequality on the output map gives
//!    `g^ = |C| |B| sqrt((1+1/c)/(1-rho)) + |D|`, and `s = gamma / g^`.
//!
//! All norms are Frobenius norms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{check_len, SubOperator};
use crate::error::{ensure_finite, Error, Result};
use crate::topology::BlockDims;

pub const DEFAULT_CONTRACTION_RADIUS: f64 = 0.95;

const YOUNG_EPS: f64 = 1e-12;
const BOUND_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CgroParams {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    /// `None` when the block has no direct feedthrough.
    pub d_hat: Option<DMatrix<f64>>,
}

impl CgroParams {
    pub fn zeros(dims: BlockDims, feedthrough: bool) -> Self {
        CgroParams {
            a_hat: DMatrix::zeros(dims.n, dims.n),
            b_hat: DMatrix::zeros(dims.n, dims.m),
            c_hat: DMatrix::zeros(dims.p, dims.n),
            d_hat: feedthrough.then(|| DMatrix::zeros(dims.p, dims.m)),
        }
    }

    /// Gaussian entries with standard deviation `0.5 / sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(dims: BlockDims, feedthrough: bool, rng: &mut R) -> Self {
        let mut gauss = |rows: usize, cols: usize, fan_in: usize| {
            let std = 0.5 / (fan_in.max(1) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
        };
        CgroParams {
            a_hat: gauss(dims.n, dims.n, dims.n),
            b_hat: gauss(dims.n, dims.m, dims.m),
            c_hat: gauss(dims.p, dims.n, dims.n),
            d_hat: feedthrough.then(|| gauss(dims.p, dims.m, dims.m)),
        }
    }

    pub fn dims(&self) -> BlockDims {
        BlockDims::new(self.b_hat.ncols(), self.c_hat.nrows(), self.a_hat.nrows())
    }

    pub fn has_feedthrough(&self) -> bool {
        self.d_hat.is_some()
    }

    /// Number of free entries (the `xi` of this block).
    pub fn len(&self) -> usize {
        self.a_hat.len() + self.b_hat.len() + self.c_hat.len() + self.d_hat.as_ref().map_or(0, DMatrix::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flattening in the order `A^, B^, C^, D^`.
    pub fn to_flat(&self, out: &mut Vec<f64>) {
        for m in self.matrices() {
            push_row_major(m, out);
        }
    }

    /// Inverse of [`CgroParams::to_flat`]; returns the number of values consumed.
    pub fn set_flat(&mut self, values: &[f64]) -> usize {
        let mut k = 0;
        for m in self.matrices_mut() {
            k += read_row_major(m, &values[k..]);
        }
        k
    }

    fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        [&self.a_hat, &self.b_hat, &self.c_hat].into_iter().chain(self.d_hat.as_ref())
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut DMatrix<f64>> {
        [&mut self.a_hat, &mut self.b_hat, &mut self.c_hat]
            .into_iter()
            .chain(self.d_hat.as_mut())
    }
}

pub(crate) fn push_row_major(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
}

pub(crate) fn read_row_major(m: &mut DMatrix<f64>, values: &[f64]) -> usize {
    let cols = m.ncols();
    for r in 0..m.nrows() {
        for c in 0..cols {
            m[(r, c)] = values[r * cols + c];
        }
    }
    m.len()
}

/// Scalar intermediates of the realization, kept for the gradient pullback.
#[derive(Clone, Debug, PartialEq)]
struct BoundTerms {
    radius: f64,
    /// `|A^|_F^2`
    a_hat_sq: f64,
    /// `a0^2 = |A|_F^2`
    a0_sq: f64,
    b_norm: f64,
    c_norm: f64,
    d_norm: f64,
    /// `sqrt((1+1/c)/(1-rho))` and its derivative in `a0^2`.
    amplification: f64,
    amplification_slope: f64,
    raw_bound: f64,
}

impl BoundTerms {
    fn new(radius: f64, a_hat_sq: f64, b_norm: f64, c_norm: f64, d_norm: f64) -> Self {
        let a0_sq = radius * radius * a_hat_sq / (a_hat_sq + 1.0);
        let (amplification, amplification_slope) = amplification(a0_sq);
        BoundTerms {
            radius,
            a_hat_sq,
            a0_sq,
            b_norm,
            c_norm,
            d_norm,
            amplification,
            amplification_slope,
            raw_bound: c_norm * b_norm * amplification + d_norm,
        }
    }

    fn denominator(&self) -> f64 {
        self.raw_bound.max(BOUND_FLOOR)
    }
}

/// `g(u) = sqrt((1 + 1/c)/(1 - (1+c) u))` with `c = (1-u)/(2u+eps)`, and `dg/du`.
fn amplification(u: f64) -> (f64, f64) {
    let e = YOUNG_EPS;
    let w = 2.0 * u + e;
    // 1 + 1/c and rho = (1 + c) u, written without cancellation
    let p = (1.0 + u + e) / (1.0 - u);
    let dp = (2.0 + e) / (1.0 - u).powi(2);
    let q = 1.0 - u * (1.0 + u + e) / w;
    let dq = -(2.0 * u * u + 2.0 * u * e + e + e * e) / (w * w);
    let g = (p / q).sqrt();
    let dg = (dp * q - p * dq) / (q * q) / (2.0 * g);
    (g, dg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgroRealized {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: Option<DMatrix<f64>>,
    /// Output scaling `s` applied to `(C, D)`.
    pub scale: f64,
    pub certified_gain: f64,
    terms: BoundTerms,
}

impl CgroRealized {
    /// Realizes `params` with assigned incremental gain `gamma` and contraction radius `radius`.
    pub fn new(params: &CgroParams, gamma: f64, radius: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Domain(format!("assigned gain must be positive and finite, got {gamma}")));
        }
        if !(radius > 0.0 && radius < 1.0) {
            return Err(Error::Domain(format!("contraction radius must lie in (0, 1), got {radius}")));
        }
        let a_hat_sq = params.a_hat.norm_squared();
        let terms = BoundTerms::new(
            radius,
            a_hat_sq,
            params.b_hat.norm(),
            params.c_hat.norm(),
            params.d_hat.as_ref().map_or(0.0, DMatrix::norm),
        );
        let a = &params.a_hat * (radius / (a_hat_sq + 1.0).sqrt());
        let scale = gamma / terms.denominator();
        Ok(CgroRealized {
            a,
            b: params.b_hat.clone(),
            c: params.c_hat.clone(),
            d: params.d_hat.clone(),
            scale,
            certified_gain: gamma,
            terms,
        })
    }

    /// `g^ * s`, recomputed from the realized matrices.
    pub fn certified_gain_bound(&self) -> f64 {
        let a0_sq = self.a.norm_squared();
        let (g, _) = amplification(a0_sq);
        let raw = self.c.norm() * self.b.norm() * g + self.d.as_ref().map_or(0.0, DMatrix::norm);
        raw.max(BOUND_FLOOR) * self.scale
    }

    /// Frobenius norm of the realized state matrix.
    pub fn contraction_factor(&self) -> f64 {
        self.a.norm()
    }

    /// The unscaled bound `g^` before flooring.
    pub fn raw_bound(&self) -> f64 {
        self.terms.raw_bound
    }

    pub fn radius(&self) -> f64 {
        self.terms.radius
    }

    /// Pulls gradients with respect to the realized matrices back onto the
    /// free parameters and the assigned gain.
    ///
    /// `g_c` and `g_d` are gradients with respect to the *scaled* output
    /// matrices `s C` and `s D`.
    pub fn pullback(&self, params: &CgroParams, g_a: &DMatrix<f64>, g_b: &DMatrix<f64>, g_c: &DMatrix<f64>, g_d: Option<&DMatrix<f64>>) -> (CgroGrads, f64) {
        let t = &self.terms;
        let denom = t.denominator();
        let floored = t.raw_bound <= BOUND_FLOOR;

        let mut d_scale = g_c.dot(&params.c_hat);
        if let (Some(gd), Some(dh)) = (g_d, params.d_hat.as_ref()) {
            d_scale += gd.dot(dh);
        }
        let d_gamma = d_scale / denom;
        let d_bound = if floored { 0.0 } else { -d_scale * self.certified_gain / (denom * denom) };

        // A = r A^ / sqrt(f + 1)
        let q = (t.a_hat_sq + 1.0).sqrt();
        let mut g_a_hat = g_a * (t.radius / q) - &params.a_hat * (t.radius / (q * q * q) * g_a.dot(&params.a_hat));
        // bound depends on a0^2 = r^2 f / (f + 1)
        let d_u = d_bound * t.c_norm * t.b_norm * t.amplification_slope;
        let du_df = t.radius * t.radius / ((t.a_hat_sq + 1.0) * (t.a_hat_sq + 1.0));
        g_a_hat += &params.a_hat * (2.0 * d_u * du_df);

        let mut g_b_hat = g_b.clone();
        if t.b_norm > 0.0 {
            g_b_hat += &params.b_hat * (d_bound * t.c_norm * t.amplification / t.b_norm);
        }
        let mut g_c_hat = g_c * self.scale;
        if t.c_norm > 0.0 {
            g_c_hat += &params.c_hat * (d_bound * t.b_norm * t.amplification / t.c_norm);
        }
        let g_d_hat = match (g_d, params.d_hat.as_ref()) {
            (Some(gd), Some(dh)) => {
                let mut g = gd * self.scale;
                if t.d_norm > 0.0 {
                    g += dh * (d_bound / t.d_norm);
                }
                Some(g)
            }
            _ => None,
        };
        (
            CgroGrads {
                a_hat: g_a_hat,
                b_hat: g_b_hat,
                c_hat: g_c_hat,
                d_hat: g_d_hat,
            },
            d_gamma,
        )
    }
}

/// Gradients with the same layout as [`CgroParams`].
pub type CgroGrads = CgroParams;

impl SubOperator for CgroRealized {
    fn dims(&self) -> BlockDims {
        BlockDims::new(self.b.ncols(), self.c.nrows(), self.a.nrows())
    }

    fn has_feedthrough(&self) -> bool {
        self.d.is_some()
    }

    fn assigned_gain(&self) -> Option<f64> {
        Some(self.certified_gain)
    }

    fn output(&self, state: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let dims = self.dims();
        check_len("state", state, dims.n)?;
        ensure_finite("state", state.as_slice())?;
        let mut y = &self.c * state.map(f64::tanh);
        if let Some(d) = &self.d {
            let u = u.ok_or_else(|| Error::Domain("feedthrough operator needs its input to produce an output".into()))?;
            check_len("input", u, dims.m)?;
            ensure_finite("input", u.as_slice())?;
            y += d * u;
        }
        Ok(y * self.scale)
    }

    fn advance(&self, state: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let dims = self.dims();
        check_len("state", state, dims.n)?;
        check_len("input", u, dims.m)?;
        ensure_finite("state", state.as_slice())?;
        ensure_finite("input", u.as_slice())?;
        Ok(&self.a * state.map(f64::tanh) + &self.b * u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::estimate_incremental_gain;
    use crate::operators::SequenceOperator;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn static_params() -> CgroParams {
        CgroParams {
            a_hat: DMatrix::zeros(0, 0),
            b_hat: DMatrix::zeros(0, 1),
            c_hat: DMatrix::zeros(1, 0),
            d_hat: Some(scalar(3.0)),
        }
    }

    fn seq(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn static_realization() {
        let r = CgroRealized::new(&static_params(), 0.5, DEFAULT_CONTRACTION_RADIUS).unwrap();
        assert_relative_eq!(r.raw_bound(), 3.0);
        assert_relative_eq!(r.scale, 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(r.certified_gain_bound(), 0.5, epsilon = 1e-15);
        let (_, y) = r.step(&DVector::zeros(0), &DVector::from_element(1, 2.0)).unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-15);
        let pairs = vec![(seq(&[1.0, -3.0, 2.0]), seq(&[0.0, 1.0, 1.0]))];
        let g = estimate_incremental_gain(&r, &pairs, &DVector::zeros(0)).unwrap();
        assert_relative_eq!(g, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_parameters_give_zero_operator() {
        let dims = BlockDims::new(2, 1, 3);
        let r = CgroRealized::new(&CgroParams::zeros(dims, false), 1.0, DEFAULT_CONTRACTION_RADIUS).unwrap();
        assert_eq!(r.raw_bound(), 0.0);
        assert_relative_eq!(r.scale, 1e9);
        let inputs: Vec<_> = (0..10).map(|t| DVector::from_vec(vec![t as f64, -1.0])).collect();
        let out = r.rollout(&DVector::zeros(3), &inputs).unwrap();
        assert!(out.iter().all(|y| y.norm() == 0.0));
    }

    #[test]
    fn normalization_of_scalar_state_matrix() {
        let p = CgroParams {
            a_hat: scalar(1.0),
            b_hat: scalar(1.0),
            c_hat: scalar(1.0),
            d_hat: None,
        };
        let r = CgroRealized::new(&p, 1.0, 0.95).unwrap();
        assert_relative_eq!(r.a[(0, 0)], 0.95 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.a[(0, 0)], 0.6718, epsilon = 1e-4);
        assert!(r.contraction_factor() < 0.95);
        assert_relative_eq!(r.certified_gain_bound(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn one_step_by_hand() {
        // A = 0.5, B = 1, C = 1, D = 0, s = 1
        let r = CgroRealized {
            a: scalar(0.5),
            b: scalar(1.0),
            c: scalar(1.0),
            d: None,
            scale: 1.0,
            certified_gain: 1.0,
            terms: BoundTerms::new(0.95, 0.0, 1.0, 1.0, 0.0),
        };
        let (x, y) = r.step(&DVector::zeros(1), &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(x[0], 1.0);
        assert_eq!(y[0], 0.0);
        let (x, y) = r.step(&DVector::zeros(1), &DVector::zeros(1)).unwrap();
        assert_eq!((x[0], y[0]), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_gain_and_inputs() {
        let p = CgroParams::zeros(BlockDims::new(1, 1, 1), false);
        assert!(matches!(CgroRealized::new(&p, 0.0, 0.95), Err(Error::Domain(_))));
        assert!(matches!(CgroRealized::new(&p, 1.0, 1.0), Err(Error::Domain(_))));
        let r = CgroRealized::new(&p, 1.0, 0.95).unwrap();
        assert!(matches!(r.step(&DVector::zeros(1), &DVector::from_element(1, f64::NAN)), Err(Error::NonFinite { .. })));
        assert!(matches!(r.step(&DVector::zeros(2), &DVector::zeros(1)), Err(Error::Shape { .. })));
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = CgroParams::random(BlockDims::new(2, 3, 4), true, &mut rng);
        let mut flat = Vec::new();
        p.to_flat(&mut flat);
        assert_eq!(flat.len(), 16 + 8 + 12 + 6);
        assert_eq!(flat[1], p.a_hat[(0, 1)]);
        let mut q = CgroParams::zeros(p.dims(), true);
        assert_eq!(q.set_flat(&flat), flat.len());
        assert_eq!(p, q);
    }

    #[test]
    fn amplification_slope_matches_finite_difference() {
        for &u in &[1e-4f64, 1e-3, 0.2, 0.5, 0.81, 0.9] {
            let h = 1e-5 * u;
            let (_, dg) = amplification(u);
            let fd = (amplification(u + h).0 - amplification(u - h).0) / (2.0 * h);
            assert_relative_eq!(dg, fd, max_relative = 1e-5);
        }
    }

    fn random_pairs(rng: &mut ChaCha8Rng, m: usize, t: usize, count: usize) -> Vec<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..count)
            .map(|_| {
                let a: Vec<_> = (0..t).map(|_| DVector::from_fn(m, |_, _| normal.sample(rng))).collect();
                let b: Vec<_> = a.iter().map(|v| v + DVector::from_fn(m, |_, _| 0.3 * normal.sample(rng))).collect();
                (a, b)
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn empirical_gain_below_certificate(seed in any::<u64>(), n in 0usize..5, m in 1usize..3, p in 1usize..3, log_gamma in -2.0f64..1.0, ft in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 2f64.sqrt()).unwrap();
            let dims = BlockDims::new(m, p, n);
            let mut params = CgroParams::zeros(dims, ft);
            let mut flat = Vec::new();
            params.to_flat(&mut flat);
            let flat: Vec<f64> = flat.iter().map(|_| normal.sample(&mut rng)).collect();
            params.set_flat(&flat);
            let gamma = 10f64.powf(log_gamma);
            let r = CgroRealized::new(&params, gamma, DEFAULT_CONTRACTION_RADIUS).unwrap();
            prop_assert!((r.certified_gain_bound() - gamma).abs() <= 1e-12 * gamma || r.raw_bound() <= BOUND_FLOOR);
            let pairs = random_pairs(&mut rng, m, 64, 5);
            let est = estimate_incremental_gain(&r, &pairs, &DVector::zeros(n)).unwrap();
            prop_assert!(est <= gamma + 1e-6, "estimate {} above certified {}", est, gamma);
        }

        #[test]
        fn contraction_with_shared_input(seed in any::<u64>(), n in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = BlockDims::new(1, 1, n);
            let params = CgroParams::random(dims, false, &mut rng);
            let r = CgroRealized::new(&params, 1.0, DEFAULT_CONTRACTION_RADIUS).unwrap();
            let a0 = r.contraction_factor();
            let normal = Normal::new(0.0, 3.0).unwrap();
            let mut x = DVector::from_fn(n, |_, _| normal.sample(&mut rng));
            let mut x_alt = DVector::from_fn(n, |_, _| normal.sample(&mut rng));
            let dx0 = (&x - &x_alt).norm();
            for t in 1..40 {
                let u = DVector::from_element(1, normal.sample(&mut rng));
                x = r.advance(&x, &u).unwrap();
                x_alt = r.advance(&x_alt, &u).unwrap();
                prop_assert!((&x - &x_alt).norm() <= a0.powi(t) * dx0 + 1e-12);
            }
        }

        #[test]
        fn origin_is_preserved(seed in any::<u64>(), n in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = CgroParams::random(BlockDims::new(2, 2, n), false, &mut rng);
            let r = CgroRealized::new(&params, 3.0, DEFAULT_CONTRACTION_RADIUS).unwrap();
            let (x, y) = r.step(&DVector::zeros(n), &DVector::zeros(2)).unwrap();
            prop_assert_eq!(x.norm(), 0.0);
            prop_assert_eq!(y.norm(), 0.0);
        }
    }
}
