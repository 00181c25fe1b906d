//! Conditional algebra for a single missing cluster covariate `C_kj`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{covariate_mean, HlmSpec};

/// Mean and variance of `C_kj` given the other components of `C_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Gaussian conditioning of component `k` of `C_j ~ N(Wα, T)` on the other
/// `p - 1` components `c_minus_k` (given in index order, skipping `k`).
pub fn conditional_moments_c(
    k: usize,
    c_minus_k: &[f64],
    alpha: &DVector<f64>,
    t: &DMatrix<f64>,
    x2: &[f64],
) -> Result<ConditionalMoments> {
    let p = t.nrows();
    if k >= p {
        return Err(Error::arg(format!("covariate index {k} out of range for p={p}")));
    }
    if c_minus_k.len() + 1 != p {
        return Err(Error::dim(format!("conditioning set has {} values, expected {}", c_minus_k.len(), p - 1)));
    }
    if alpha.len() != p * (1 + x2.len()) {
        return Err(Error::dim("alpha does not match p and x2"));
    }
    let m = covariate_mean(x2, alpha, p);
    if p == 1 {
        return finish(m[0], t[(0, 0)]);
    }
    let others: Vec<usize> = (0..p).filter(|&r| r != k).collect();
    let t_oo = DMatrix::from_fn(p - 1, p - 1, |a, b| t[(others[a], others[b])]);
    let t_ko = DVector::from_fn(p - 1, |a, _| t[(k, others[a])]);
    let l = linalg::cholesky_lower(&t_oo, 1e-14)
        .map_err(|_| Error::NotPositiveDefinite("T without component k is singular".into()))?;
    let resid = DVector::from_fn(p - 1, |a, _| c_minus_k[a] - m[others[a]]);
    let weights = linalg::cholesky_solve(&l, &t_ko);
    let mean = m[k] + weights.dot(&resid);
    let variance = t[(k, k)] - weights.dot(&t_ko);
    finish(mean, variance)
}

fn finish(mean: f64, variance: f64) -> Result<ConditionalMoments> {
    if !(variance > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("conditional variance {variance} is not positive")));
    }
    Ok(ConditionalMoments { mean, variance })
}

/// Splits the linear predictor of one unit around `C_kj`: returns
/// `(μ₁, μ₂)` with `μ₁ + μ₂ C_kj = X_ijᵀβ + u_j` for any value of `C_kj`.
/// `x` is the combined known-covariate vector `[x1_ij, x2_j]`; the value of
/// `c_j[k]` is ignored.
pub fn compute_mu1_mu2(
    spec: &HlmSpec,
    beta: &DVector<f64>,
    x: &[f64],
    c_j: &[f64],
    u_j: f64,
    k: usize,
) -> Result<(f64, f64)> {
    if k >= spec.p() {
        return Err(Error::arg(format!("covariate index {k} out of range for p={}", spec.p())));
    }
    if x.len() != spec.q() || c_j.len() != spec.p() || beta.len() != spec.n_fixed() {
        return Err(Error::dim("mu decomposition inputs do not match the model dimensions"));
    }
    let mut row = vec![0.0; spec.n_fixed()];
    let mut c = c_j.to_vec();
    Ok(mu_split(spec, beta.as_slice(), &x[..spec.q1()], &x[spec.q1()..], &mut c, u_j, k, &mut row))
}

/// Allocation-free core of [`compute_mu1_mu2`]; `c[k]` is restored on return.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mu_split(
    spec: &HlmSpec,
    beta: &[f64],
    x1: &[f64],
    x2: &[f64],
    c: &mut [f64],
    u_j: f64,
    k: usize,
    row: &mut [f64],
) -> (f64, f64) {
    let saved = c[k];
    c[k] = 0.0;
    spec.fill_design(x1, x2, c, row);
    let mu1 = super::dot(row, beta) + u_j;
    let mut mu2 = beta[1 + k];
    let q1 = spec.q1();
    let xc = spec.xc_offset();
    for (m, &(s, col)) in spec.active_xc().iter().enumerate() {
        if s == k {
            let xv = if col < q1 { x1[col] } else { x2[col - q1] };
            mu2 += beta[xc + m] * xv;
        }
    }
    let cc = spec.cc_offset();
    for (m, &(s, t)) in spec.active_cc().iter().enumerate() {
        if s == k {
            mu2 += beta[cc + m] * c[t];
        } else if t == k {
            mu2 += beta[cc + m] * c[s];
        }
    }
    c[k] = saved;
    (mu1, mu2)
}

/// Exact posterior of `C_kj` combining its conditional prior with the
/// cluster's outcomes: precision `1/T_cond + Σ μ₂ᵢ² / σ²`, mean
/// `M + Σ μ₂ᵢ (Yᵢ − μ₁ᵢ − μ₂ᵢ M) / (σ² · precision)`. Returns `(mean, variance)`.
pub fn posterior_c_kj(prior: &ConditionalMoments, mu: &[(f64, f64)], y: &[f64], sigma2: f64) -> Result<(f64, f64)> {
    if mu.len() != y.len() {
        return Err(Error::dim("one (mu1, mu2) pair is needed per outcome"));
    }
    if !(prior.variance > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::NotPositiveDefinite("posterior of C needs positive variances".into()));
    }
    let mut info = 0.0;
    let mut score = 0.0;
    for (&(mu1, mu2), &yi) in mu.iter().zip(y) {
        info += mu2 * mu2;
        score += mu2 * (yi - mu1 - mu2 * prior.mean);
    }
    let precision = 1.0 / prior.variance + info / sigma2;
    let variance = 1.0 / precision;
    Ok((prior.mean + variance * score / sigma2, variance))
}
