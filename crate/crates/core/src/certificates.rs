//! Dissipativity certificates for networked operators and an empirical
//! incremental-gain estimator.
//!
//! Two equivalent forms of the network condition are assembled, both
//! arranged so that the condition reads "matrix is PSD":
//!
//! * the full quadratic form in the stacked variables `(y, d)`, negated:
//!   `[[A - I - M'GM, -M'G], [-GM, gamma_M^2 I - G]]`,
//! * its Schur form `[[A - I, M'], [M, -D^-1]]` with `D` diagonal.
//!
//! Here `A = blkdiag(alpha_i I_{p_i})` and `G = blkdiag(alpha_i gamma_i^2 I_{m_i})`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::SequenceOperator;
use crate::parametrization::GainAllocation;
use crate::topology::InterconnectionTopology;

/// Absolute tolerance on the smallest eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Relative distance below which `alpha_i gamma_i^2` counts as equal to `gamma_M^2`.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateForm {
    Schur,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub psd: bool,
    pub min_eigenvalue: f64,
    pub gershgorin_pass: bool,
    pub worst_row_margin: f64,
    pub matrix_dim: usize,
    pub form: CertificateForm,
}

/// Per-block diagonal entries of `G = blkdiag(alpha_i gamma_i^2 I_{m_i})`.
fn weighted_input_gains(t: &InterconnectionTopology, a: &GainAllocation) -> Result<DVector<f64>> {
    if a.alphas.len() != t.len() || a.gammas.len() != t.len() {
        return Err(Error::shape("gain allocation", t.len(), a.alphas.len().min(a.gammas.len())));
    }
    let mut g = DVector::zeros(t.input_width());
    for i in 0..t.len() {
        let v = a.alphas[i] * a.gammas[i] * a.gammas[i];
        for r in t.input_index_set(i)? {
            g[r] = v;
        }
    }
    Ok(g)
}

fn output_weights(t: &InterconnectionTopology, a: &GainAllocation) -> Result<DVector<f64>> {
    let mut w = DVector::zeros(t.output_width());
    for i in 0..t.len() {
        for c in t.output_index_set(i)? {
            w[c] = a.alphas[i];
        }
    }
    Ok(w)
}

/// Schur-form certificate `[[A - I, M'], [M, -D^-1]]`, size `p + m`.
pub fn assemble_certificate_matrix(t: &InterconnectionTopology, a: &GainAllocation) -> Result<DMatrix<f64>> {
    let g = weighted_input_gains(t, a)?;
    let w = output_weights(t, a)?;
    let gm2 = a.gamma_m * a.gamma_m;
    for i in 0..t.len() {
        let ag2 = a.alphas[i] * a.gammas[i] * a.gammas[i];
        if (ag2 - gm2).abs() <= SINGULAR_RTOL * gm2 {
            return Err(Error::Singular(i));
        }
    }
    let (m, p) = (t.input_width(), t.output_width());
    let mut s = DMatrix::zeros(p + m, p + m);
    for j in 0..p {
        s[(j, j)] = w[j] - 1.0;
    }
    s.view_mut((p, 0), (m, p)).copy_from(t.coupling());
    s.view_mut((0, p), (p, m)).copy_from(&t.coupling().transpose());
    for r in 0..m {
        let d = g[r] * gm2 / (g[r] - gm2);
        s[(p + r, p + r)] = -1.0 / d;
    }
    Ok(s)
}

/// Negated network dissipation condition in the stacked variables `(y, d)`.
pub fn assemble_full_condition_matrix(t: &InterconnectionTopology, a: &GainAllocation) -> Result<DMatrix<f64>> {
    let g = DMatrix::from_diagonal(&weighted_input_gains(t, a)?);
    let w = output_weights(t, a)?;
    let (m, p) = (t.input_width(), t.output_width());
    let mm = t.coupling();
    let gm2 = a.gamma_m * a.gamma_m;

    let gmm = &g * mm;
    let mut top_left = -(mm.transpose() * &gmm);
    for j in 0..p {
        top_left[(j, j)] += w[j] - 1.0;
    }
    let mut bottom_right = -g.clone();
    for r in 0..m {
        bottom_right[(r, r)] += gm2;
    }

    let mut s = DMatrix::zeros(p + m, p + m);
    s.view_mut((0, 0), (p, p)).copy_from(&top_left);
    s.view_mut((p, 0), (m, p)).copy_from(&(-&gmm));
    s.view_mut((0, p), (p, m)).copy_from(&(-gmm.transpose()));
    s.view_mut((p, p), (m, m)).copy_from(&bottom_right);
    Ok(s)
}

/// Smallest eigenvalue test after symmetrization. Returns `(psd, min_eigenvalue)`.
pub fn check_psd(s: &DMatrix<f64>, tol: f64) -> Result<(bool, f64)> {
    if !s.is_square() {
        return Err(Error::shape("PSD check", "square matrix", format!("{}x{}", s.nrows(), s.ncols())));
    }
    if let Some(k) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite("PSD check", format!("({}, {})", k % s.nrows(), k / s.nrows())));
    }
    if s.nrows() == 0 {
        return Ok((true, 0.0));
    }
    let sym = (s + s.transpose()) * 0.5;
    let min = sym.symmetric_eigenvalues().min();
    Ok((min >= -tol, min))
}

/// Row-wise Gershgorin test: every disc must sit in the closed right half-plane.
/// Returns `(pass, min_j (S_jj - sum_{k != j} |S_jk|))`.
pub fn gershgorin_check(s: &DMatrix<f64>) -> (bool, f64) {
    gershgorin_check_with_tolerance(s, 0.0)
}

/// As [`gershgorin_check`], passing when the worst margin is at least `-tol`.
/// Every eigenvalue is then at least `-tol` as well.
pub fn gershgorin_check_with_tolerance(s: &DMatrix<f64>, tol: f64) -> (bool, f64) {
    let margin = (0..s.nrows())
        .map(|j| {
            let radius: f64 = (0..s.ncols()).filter(|&k| k != j).map(|k| s[(j, k)].abs()).sum();
            s[(j, j)] - radius
        })
        .fold(f64::INFINITY, f64::min);
    let margin = if s.nrows() == 0 { 0.0 } else { margin };
    (margin >= -tol, margin)
}

/// Certifies an allocation, falling back to the full form when the Schur
/// form is singular.
pub fn certify(t: &InterconnectionTopology, a: &GainAllocation, tol: f64) -> Result<CertificateReport> {
    let (s, form) = match assemble_certificate_matrix(t, a) {
        Ok(s) => (s, CertificateForm::Schur),
        Err(Error::Singular(i)) => {
            log::debug!("Schur certificate singular at sub-operator {i}; using the full form");
            (assemble_full_condition_matrix(t, a)?, CertificateForm::Full)
        }
        Err(e) => return Err(e),
    };
    let (psd, min_eigenvalue) = check_psd(&s, tol)?;
    let (gershgorin_pass, worst_row_margin) = gershgorin_check_with_tolerance(&s, tol);
    Ok(CertificateReport {
        psd,
        min_eigenvalue,
        gershgorin_pass,
        worst_row_margin,
        matrix_dim: s.nrows(),
        form,
    })
}

/// A pair of input sequences driven through the operator from the same initial state.
pub type InputPair = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Largest observed ratio `sqrt(sum |e - e~|^2 / sum |d - d~|^2)` over the pairs.
///
/// Both rollouts start from `x0`, so the result is a lower bound on the
/// incremental L2 gain.
pub fn estimate_incremental_gain<O: SequenceOperator + ?Sized>(
    op: &O,
    pairs: &[InputPair],
    x0: &DVector<f64>,
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (k, (d, d_alt)) in pairs.iter().enumerate() {
        if d.len() != d_alt.len() || d.is_empty() {
            return Err(Error::shape(format!("input pair {k}"), d.len().max(1), d_alt.len()));
        }
        let den: f64 = d.iter().zip(d_alt).map(|(a, b)| (a - b).norm_squared()).sum();
        if den == 0.0 {
            log::warn!("input pair {k} has identical sequences; skipped");
            continue;
        }
        let e = op.rollout(x0, d)?;
        let e_alt = op.rollout(x0, d_alt)?;
        let num: f64 = e.iter().zip(&e_alt).map(|(a, b)| (a - b).norm_squared()).sum();
        let ratio = (num / den).sqrt();
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::Estimation("every input pair has a zero increment".into()))
}
