//! Model shape, data container and design-vector construction.
//!
//! Indices are zero-based throughout: cluster covariate `s` is `C_{s+1}` in
//! one-based notation, and an X column index addresses the combined known
//! covariate vector `X_ij = [x1_ij, x2_j]`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative ridge added to a singular complete-case covariance.
pub const RIDGE_RELATIVE: f64 = 1e-6;

/// Shape of the analysis model: dimensions and active interaction blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HlmSpec {
    p: usize,
    q1: usize,
    q2: usize,
    active_xc: Vec<(usize, usize)>,
    active_cc: Vec<(usize, usize)>,
}

impl HlmSpec {
    /// `active_xc` holds `(s, x_column)` pairs and `active_cc` holds `(s, t)`
    /// pairs with `s < t`. Both are sorted lexicographically and deduplicated.
    pub fn new(
        p: usize,
        q1: usize,
        q2: usize,
        mut active_xc: Vec<(usize, usize)>,
        mut active_cc: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if p == 0 {
            return Err(Error::arg("at least one cluster covariate is required (p >= 1)"));
        }
        let q = q1 + q2;
        for &(s, col) in &active_xc {
            if s >= p || col >= q {
                return Err(Error::arg(format!(
                    "X-by-C interaction (C{}, X{}) outside p={p}, q={q}",
                    s + 1,
                    col + 1
                )));
            }
        }
        for &(s, t) in &active_cc {
            if s >= t {
                return Err(Error::arg(format!("C-by-C interaction ({}, {}) must satisfy s < t", s + 1, t + 1)));
            }
            if t >= p {
                return Err(Error::arg(format!("C-by-C interaction ({}, {}) outside p={p}", s + 1, t + 1)));
            }
        }
        active_xc.sort_unstable();
        active_xc.dedup();
        active_cc.sort_unstable();
        active_cc.dedup();
        Ok(Self { p, q1, q2, active_xc, active_cc })
    }

    /// Every `C_s C_t` pair active and no X-by-C terms.
    pub fn with_all_cc(p: usize, q1: usize, q2: usize) -> Result<Self> {
        let cc = (0..p).flat_map(|s| ((s + 1)..p).map(move |t| (s, t))).collect();
        Self::new(p, q1, q2, Vec::new(), cc)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q1(&self) -> usize {
        self.q1
    }

    pub fn q2(&self) -> usize {
        self.q2
    }

    pub fn q(&self) -> usize {
        self.q1 + self.q2
    }

    pub fn active_xc(&self) -> &[(usize, usize)] {
        &self.active_xc
    }

    pub fn active_cc(&self) -> &[(usize, usize)] {
        &self.active_cc
    }

    /// Length of β: `1 + p + q + |XC| + |CC|`.
    pub fn n_fixed(&self) -> usize {
        1 + self.p + self.q() + self.active_xc.len() + self.active_cc.len()
    }

    pub(crate) fn xc_offset(&self) -> usize {
        1 + self.p + self.q()
    }

    pub(crate) fn cc_offset(&self) -> usize {
        self.xc_offset() + self.active_xc.len()
    }

    /// Number of covariate-model fixed effects, `p (1 + q2)`.
    pub fn n_alpha(&self) -> usize {
        self.p * (1 + self.q2)
    }

    /// Human-readable term names for each β entry, in design order.
    pub fn term_labels(&self, c_names: &[String], x_names: &[String]) -> Result<Vec<String>> {
        if c_names.len() != self.p || x_names.len() != self.q() {
            return Err(Error::dim(format!(
                "term labels need {} C names and {} X names, got {} and {}",
                self.p,
                self.q(),
                c_names.len(),
                x_names.len()
            )));
        }
        let mut labels = Vec::with_capacity(self.n_fixed());
        labels.push("Intercept".to_string());
        labels.extend(c_names.iter().cloned());
        labels.extend(x_names.iter().cloned());
        for &(s, col) in &self.active_xc {
            labels.push(format!("{}x{}", c_names[s], x_names[col]));
        }
        for &(s, t) in &self.active_cc {
            labels.push(format!("{}x{}", c_names[s], c_names[t]));
        }
        Ok(labels)
    }

    /// Term names using `C1..Cp` and `X1..Xq`.
    pub fn default_term_labels(&self) -> Vec<String> {
        let c: Vec<String> = (1..=self.p).map(|k| format!("C{k}")).collect();
        let x: Vec<String> = (1..=self.q()).map(|k| format!("X{k}")).collect();
        self.term_labels(&c, &x).expect("default labels have matching dimensions")
    }

    /// Writes the design vector for known covariates `[x1, x2]` and realized
    /// `c` into `out`. Slices must already have the dimensions of `self`.
    pub(crate) fn fill_design(&self, x1: &[f64], x2: &[f64], c: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x1.len(), self.q1);
        debug_assert_eq!(x2.len(), self.q2);
        debug_assert_eq!(c.len(), self.p);
        debug_assert_eq!(out.len(), self.n_fixed());
        out[0] = 1.0;
        out[1..=self.p].copy_from_slice(c);
        let xo = 1 + self.p;
        out[xo..xo + self.q1].copy_from_slice(x1);
        out[xo + self.q1..xo + self.q1 + self.q2].copy_from_slice(x2);
        let xc = self.xc_offset();
        for (m, &(s, col)) in self.active_xc.iter().enumerate() {
            let x = if col < self.q1 { x1[col] } else { x2[col - self.q1] };
            out[xc + m] = x * c[s];
        }
        let cc = self.cc_offset();
        for (m, &(s, t)) in self.active_cc.iter().enumerate() {
            out[cc + m] = c[s] * c[t];
        }
    }
}

/// Fixed-effect design vector
/// `[1, C, X, (X·C_s terms in (s, column) order), (C_s C_t terms in (s, t) order)]`.
pub fn build_design_vector(spec: &HlmSpec, x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.q() {
        return Err(Error::dim(format!("expected {} known covariates, got {}", spec.q(), x.len())));
    }
    if c.len() != spec.p() {
        return Err(Error::dim(format!("expected {} cluster covariates, got {}", spec.p(), c.len())));
    }
    let mut out = vec![0.0; spec.n_fixed()];
    spec.fill_design(&x[..spec.q1], &x[spec.q1..], c, &mut out);
    Ok(out)
}

/// Covariate-model design `W = I_p ⊗ [1 x2ᵀ]`, a `p × p(1+q2)` matrix.
pub fn covariate_design(x2: &[f64], p: usize) -> DMatrix<f64> {
    let width = 1 + x2.len();
    let mut w = DMatrix::zeros(p, p * width);
    for k in 0..p {
        w[(k, k * width)] = 1.0;
        for (m, &v) in x2.iter().enumerate() {
            w[(k, k * width + 1 + m)] = v;
        }
    }
    w
}

/// Mean of `C_j` under the covariate model, `W α`, without forming `W`.
pub(crate) fn covariate_mean(x2: &[f64], alpha: &DVector<f64>, p: usize) -> DVector<f64> {
    let width = 1 + x2.len();
    DVector::from_fn(p, |k, _| {
        let block = &alpha.as_slice()[k * width..(k + 1) * width];
        block[0] + block[1..].iter().zip(x2).map(|(a, x)| a * x).sum::<f64>()
    })
}

/// Model parameters θ = (β, τ, σ², α, T).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub beta: DVector<f64>,
    /// Level-2 (random intercept) variance.
    pub tau: f64,
    /// Level-1 residual variance.
    pub sigma2: f64,
    pub alpha: DVector<f64>,
    /// Covariance of `C_j` given `x2_j`.
    pub t: DMatrix<f64>,
}

impl Parameters {
    pub fn validate(&self, spec: &HlmSpec) -> Result<()> {
        if self.beta.len() != spec.n_fixed() {
            return Err(Error::dim(format!("beta has {} entries, spec needs {}", self.beta.len(), spec.n_fixed())));
        }
        if self.alpha.len() != spec.n_alpha() {
            return Err(Error::dim(format!("alpha has {} entries, spec needs {}", self.alpha.len(), spec.n_alpha())));
        }
        if !(self.tau > 0.0) || !(self.sigma2 > 0.0) {
            return Err(Error::arg(format!(
                "variances must be positive (tau={}, sigma2={})",
                self.tau, self.sigma2
            )));
        }
        if self.t.nrows() != spec.p() || self.t.ncols() != spec.p() {
            return Err(Error::dim("T must be p x p"));
        }
        linalg::require_spd(&self.t, "T")
    }
}

/// Everything needed to construct a [`Dataset`]. Matrices are row-major.
#[derive(Debug, Clone, Default)]
pub struct DatasetParts {
    pub cluster_sizes: Vec<usize>,
    pub y: Vec<f64>,
    pub y_observed: Vec<bool>,
    pub q1: usize,
    /// `N × q1` level-1 covariates.
    pub x1: Vec<f64>,
    pub q2: usize,
    /// `J × q2` level-2 covariates.
    pub x2: Vec<f64>,
    pub p: usize,
    /// `J × p` cluster covariates; entries under a false mask are ignored.
    pub c: Vec<f64>,
    pub c_observed: Vec<bool>,
}

/// Two-level data set in long format, units stored cluster by cluster.
///
/// Cells whose mask is false are treated as missing. Their stored value is
/// kept untouched (it may be NaN, or the pre-masking truth in simulations)
/// and is never read by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    starts: Vec<usize>,
    cluster_of: Vec<usize>,
    y: Vec<f64>,
    y_observed: Vec<bool>,
    q1: usize,
    x1: Vec<f64>,
    q2: usize,
    x2: Vec<f64>,
    p: usize,
    c: Vec<f64>,
    c_observed: Vec<bool>,
}

impl Dataset {
    pub fn new(parts: DatasetParts) -> Result<Self> {
        let DatasetParts { cluster_sizes, y, y_observed, q1, x1, q2, x2, p, c, c_observed } = parts;
        let j = cluster_sizes.len();
        if j == 0 {
            return Err(Error::Data("data set has no clusters".into()));
        }
        if let Some(idx) = cluster_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("cluster {idx} has no units")));
        }
        let n: usize = cluster_sizes.iter().sum();
        if y.len() != n || y_observed.len() != n {
            return Err(Error::dim(format!("outcome has {} values / {} mask entries, expected {n}", y.len(), y_observed.len())));
        }
        if x1.len() != n * q1 {
            return Err(Error::dim(format!("x1 has {} values, expected {}", x1.len(), n * q1)));
        }
        if x2.len() != j * q2 {
            return Err(Error::dim(format!("x2 has {} values, expected {}", x2.len(), j * q2)));
        }
        if c.len() != j * p || c_observed.len() != j * p {
            return Err(Error::dim(format!("c has {} values / {} mask entries, expected {}", c.len(), c_observed.len(), j * p)));
        }
        if x1.iter().chain(&x2).any(|v| !v.is_finite()) {
            return Err(Error::Data("known covariates must be fully observed and finite".into()));
        }
        if y.iter().zip(&y_observed).any(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::Data("observed outcome values must be finite".into()));
        }
        if c.iter().zip(&c_observed).any(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::Data("observed cluster covariates must be finite".into()));
        }
        let mut starts = Vec::with_capacity(j + 1);
        let mut cluster_of = Vec::with_capacity(n);
        let mut acc = 0;
        for (idx, &size) in cluster_sizes.iter().enumerate() {
            starts.push(acc);
            cluster_of.extend(std::iter::repeat(idx).take(size));
            acc += size;
        }
        starts.push(acc);
        Ok(Self { starts, cluster_of, y, y_observed, q1, x1, q2, x2, p, c, c_observed })
    }

    pub fn n_clusters(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q1(&self) -> usize {
        self.q1
    }

    pub fn q2(&self) -> usize {
        self.q2
    }

    pub fn cluster_size(&self, j: usize) -> usize {
        self.starts[j + 1] - self.starts[j]
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        (0..self.n_clusters()).map(|j| self.cluster_size(j)).collect()
    }

    /// Global unit indices belonging to cluster `j`.
    pub fn units(&self, j: usize) -> Range<usize> {
        self.starts[j]..self.starts[j + 1]
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn y_raw(&self) -> &[f64] {
        &self.y
    }

    pub fn y_observed(&self) -> &[bool] {
        &self.y_observed
    }

    pub fn x1_row(&self, i: usize) -> &[f64] {
        &self.x1[i * self.q1..(i + 1) * self.q1]
    }

    pub fn x2_row(&self, j: usize) -> &[f64] {
        &self.x2[j * self.q2..(j + 1) * self.q2]
    }

    /// Stored cluster-covariate row (missing cells hold whatever was stored).
    pub fn c_row_raw(&self, j: usize) -> &[f64] {
        &self.c[j * self.p..(j + 1) * self.p]
    }

    pub fn c_raw(&self) -> &[f64] {
        &self.c
    }

    pub fn c_observed(&self) -> &[bool] {
        &self.c_observed
    }

    pub fn c_is_observed(&self, j: usize, k: usize) -> bool {
        self.c_observed[j * self.p + k]
    }

    pub fn cluster_complete(&self, j: usize) -> bool {
        self.c_observed[j * self.p..(j + 1) * self.p].iter().all(|&o| o)
    }

    pub fn n_missing_y(&self) -> usize {
        self.y_observed.iter().filter(|&&o| !o).count()
    }

    pub fn n_missing_c(&self) -> usize {
        self.c_observed.iter().filter(|&&o| !o).count()
    }

    /// Same values under new masks.
    pub fn with_masks(&self, y_observed: Vec<bool>, c_observed: Vec<bool>) -> Result<Self> {
        if y_observed.len() != self.y.len() || c_observed.len() != self.c.len() {
            return Err(Error::dim("mask lengths do not match the data set"));
        }
        let mut out = self.clone();
        out.y_observed = y_observed;
        out.c_observed = c_observed;
        if out.y.iter().zip(&out.y_observed).any(|(v, &o)| o && !v.is_finite())
            || out.c.iter().zip(&out.c_observed).any(|(v, &o)| o && !v.is_finite())
        {
            return Err(Error::Data("cannot unmask a cell without a stored value".into()));
        }
        Ok(out)
    }

    /// All cells marked observed again. Only meaningful when masking kept
    /// the stored values, as the simulation harness does.
    pub fn unmasked(&self) -> Result<Self> {
        self.with_masks(vec![true; self.y.len()], vec![true; self.c.len()])
    }

    pub fn into_parts(self) -> DatasetParts {
        DatasetParts {
            cluster_sizes: (0..self.starts.len() - 1).map(|j| self.starts[j + 1] - self.starts[j]).collect(),
            y: self.y,
            y_observed: self.y_observed,
            q1: self.q1,
            x1: self.x1,
            q2: self.q2,
            x2: self.x2,
            p: self.p,
            c: self.c,
            c_observed: self.c_observed,
        }
    }

    pub(crate) fn check_spec(&self, spec: &HlmSpec) -> Result<()> {
        if spec.p() != self.p || spec.q1() != self.q1 || spec.q2() != self.q2 {
            return Err(Error::dim(format!(
                "model expects (p, q1, q2) = ({}, {}, {}), data has ({}, {}, {})",
                spec.p(),
                spec.q1(),
                spec.q2(),
                self.p,
                self.q1,
                self.q2
            )));
        }
        Ok(())
    }
}

/// Residual covariance of `C_j` over clusters with every component observed,
/// after regressing each component on `[1 x2_j]`. The divisor is
/// `m - 1 - q2`. A numerically singular result gets a ridge of
/// `RIDGE_RELATIVE · trace / p` (or `RIDGE_RELATIVE` when the trace is zero).
pub fn complete_case_covariance(data: &Dataset) -> Result<DMatrix<f64>> {
    let p = data.p();
    let q2 = data.q2();
    let complete: Vec<usize> = (0..data.n_clusters()).filter(|&j| data.cluster_complete(j)).collect();
    let m = complete.len();
    let needed = (p + 1).max(q2 + 2);
    if m < needed {
        return Err(Error::TooFewCompleteCases { found: m, needed });
    }
    let w = DMatrix::from_fn(m, 1 + q2, |r, col| if col == 0 { 1.0 } else { data.x2_row(complete[r])[col - 1] });
    let mut resid = DMatrix::<f64>::zeros(m, p);
    for k in 0..p {
        let ck = DVector::from_fn(m, |r, _| data.c_row_raw(complete[r])[k]);
        let coef = linalg::least_squares(&w, &ck).map_err(|col| {
            Error::Data(format!("level-2 covariate column {col} is collinear among complete cases"))
        })?;
        resid.set_column(k, &(ck - &w * coef));
    }
    let mut t = resid.transpose() * &resid / (m - 1 - q2) as f64;
    linalg::symmetrize(&mut t);
    if !linalg::is_spd(&t) {
        let trace = t.trace();
        let eps = if trace > 0.0 { RIDGE_RELATIVE * trace / p as f64 } else { RIDGE_RELATIVE };
        for k in 0..p {
            t[(k, k)] += eps;
        }
    }
    Ok(t)
}
