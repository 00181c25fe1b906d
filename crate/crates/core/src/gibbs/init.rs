//! Starting values: fills for the missing cells and a least-squares start for θ.

use nalgebra::{DMatrix, DVector};

use super::ChainState;
use crate::dist::RngStream;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{complete_case_covariance, Dataset, HlmSpec, Parameters};

use super::PriorConfig;

/// How a chain fills its missing cells before the first cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Observed column means.
    MeanFill,
    /// Single-donor predictive mean matching on the known covariates.
    PredictiveMeanMatching,
    /// A uniformly chosen observed value of the same variable.
    RandomDonor,
}

impl InitStrategy {
    /// Strategy for chain `index` of `n_chains`.
    pub fn for_chain(index: usize, n_chains: usize) -> Self {
        match (n_chains, index) {
            (1, _) => InitStrategy::MeanFill,
            (_, 0) => InitStrategy::PredictiveMeanMatching,
            (_, 1) => InitStrategy::MeanFill,
            _ => InitStrategy::RandomDonor,
        }
    }

    /// Builds the full starting state for this strategy.
    pub fn initial_state(self, spec: &HlmSpec, data: &Dataset, priors: &PriorConfig, rng: &mut RngStream) -> Result<ChainState> {
        let (y, c) = match self {
            InitStrategy::MeanFill => fill_mean(data)?,
            InitStrategy::PredictiveMeanMatching => fill_pmm(data)?,
            InitStrategy::RandomDonor => fill_random_donor(data, rng)?,
        };
        let (params, u) = initial_parameters(spec, data, &y, &c, priors)?;
        ChainState::new(data, params, u, y, c)
    }
}

struct Variable {
    values: Vec<f64>,
    observed: Vec<bool>,
    name: String,
}

fn variables(data: &Dataset) -> Vec<Variable> {
    let p = data.p();
    let mut vars = vec![Variable {
        values: data.y_raw().to_vec(),
        observed: data.y_observed().to_vec(),
        name: "Y".into(),
    }];
    for k in 0..p {
        vars.push(Variable {
            values: (0..data.n_clusters()).map(|j| data.c_raw()[j * p + k]).collect(),
            observed: (0..data.n_clusters()).map(|j| data.c_is_observed(j, k)).collect(),
            name: format!("C{}", k + 1),
        });
    }
    vars
}

fn assemble(data: &Dataset, filled: Vec<Vec<f64>>) -> (Vec<f64>, Vec<f64>) {
    let p = data.p();
    let mut it = filled.into_iter();
    let y = it.next().expect("outcome column");
    let mut c = vec![0.0; data.n_clusters() * p];
    for (k, col) in it.enumerate() {
        for (j, v) in col.into_iter().enumerate() {
            c[j * p + k] = v;
        }
    }
    (y, c)
}

fn observed_mean(var: &Variable) -> Result<f64> {
    let (sum, n) = var
        .values
        .iter()
        .zip(&var.observed)
        .filter(|(_, &o)| o)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Data(format!("{} has no observed values", var.name)));
    }
    Ok(sum / n as f64)
}

fn mean_filled(var: &Variable) -> Result<Vec<f64>> {
    let mean = observed_mean(var)?;
    Ok(var.values.iter().zip(&var.observed).map(|(&v, &o)| if o { v } else { mean }).collect())
}

/// Fills every missing cell with its variable's observed mean.
pub fn fill_mean(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let filled = variables(data).iter().map(mean_filled).collect::<Result<Vec<_>>>()?;
    Ok(assemble(data, filled))
}

/// Single-donor predictive mean matching. Each variable is regressed by
/// least squares on the fully known covariates (`[1, x1, x2]` for Y,
/// `[1, x2]` for each C) over its observed cells; a missing cell takes the
/// observed value of the donor whose fitted mean is closest to its own.
/// Falls back to the observed mean when the regression is not estimable.
pub fn fill_pmm(data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let vars = variables(data);
    let mut filled = Vec::with_capacity(vars.len());
    for (idx, var) in vars.iter().enumerate() {
        let predictors = if idx == 0 {
            let q1 = data.q1();
            let q2 = data.q2();
            DMatrix::from_fn(data.n_units(), 1 + q1 + q2, |i, col| match col {
                0 => 1.0,
                c if c <= q1 => data.x1_row(i)[c - 1],
                c => data.x2_row(data.cluster_of(i))[c - 1 - q1],
            })
        } else {
            DMatrix::from_fn(data.n_clusters(), 1 + data.q2(), |j, col| if col == 0 { 1.0 } else { data.x2_row(j)[col - 1] })
        };
        filled.push(pmm_column(var, &predictors)?);
    }
    Ok(assemble(data, filled))
}

fn pmm_column(var: &Variable, predictors: &DMatrix<f64>) -> Result<Vec<f64>> {
    if var.observed.iter().all(|&o| o) {
        return Ok(var.values.clone());
    }
    let obs: Vec<usize> = (0..var.values.len()).filter(|&r| var.observed[r]).collect();
    if obs.len() <= predictors.ncols() {
        return mean_filled(var);
    }
    let x_obs = predictors.select_rows(&obs);
    let y_obs = DVector::from_iterator(obs.len(), obs.iter().map(|&r| var.values[r]));
    let Ok(coef) = linalg::least_squares(&x_obs, &y_obs) else {
        return mean_filled(var);
    };
    let fitted = predictors * coef;
    let mut donors: Vec<(f64, usize)> = obs.iter().map(|&r| (fitted[r], r)).collect();
    donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let keys: Vec<f64> = donors.iter().map(|d| d.0).collect();
    let mut out = var.values.clone();
    for r in 0..out.len() {
        if var.observed[r] {
            continue;
        }
        let target = fitted[r];
        let pos = keys.partition_point(|&k| k < target);
        let mut best = None::<(f64, usize)>;
        for cand in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
            if let Some(&(key, row)) = donors.get(cand) {
                let dist = (key - target).abs();
                if best.map_or(true, |(d, _)| dist < d) {
                    best = Some((dist, row));
                }
            }
        }
        out[r] = var.values[best.expect("at least one donor").1];
    }
    Ok(out)
}

/// Fills each missing cell with a uniformly drawn observed value of the same variable.
pub fn fill_random_donor(data: &Dataset, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut filled = Vec::new();
    for var in variables(data) {
        let obs: Vec<f64> = var.values.iter().zip(&var.observed).filter(|(_, &o)| o).map(|(v, _)| *v).collect();
        if obs.is_empty() {
            return Err(Error::Data(format!("{} has no observed values", var.name)));
        }
        filled.push(
            var.values
                .iter()
                .zip(&var.observed)
                .map(|(&v, &o)| if o { v } else { obs[rng.index(obs.len())] })
                .collect(),
        );
    }
    Ok(assemble(data, filled))
}

/// Starting θ from completed data: β by least squares on the full design;
/// σ² from pooled within-cluster residual variance; τ from the between-cluster
/// variance of mean residuals net of its σ² share (floored at 1e-3·σ²); α and
/// T from per-component least squares of C on `[1 x2]`. Random effects start
/// at the shrunken cluster-mean residuals.
pub fn initial_parameters(
    spec: &HlmSpec,
    data: &Dataset,
    y: &[f64],
    c: &[f64],
    priors: &PriorConfig,
) -> Result<(Parameters, Vec<f64>)> {
    data.check_spec(spec)?;
    let n = data.n_units();
    let jn = data.n_clusters();
    let p = spec.p();
    let d = spec.n_fixed();
    let mut x = DMatrix::<f64>::zeros(n, d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        let j = data.cluster_of(i);
        spec.fill_design(data.x1_row(i), data.x2_row(j), &c[j * p..(j + 1) * p], &mut row);
        x.row_mut(i).copy_from_slice(&row);
    }
    let yv = DVector::from_column_slice(y);
    let beta = linalg::least_squares(&x, &yv).map_err(|column| Error::SingularDesign {
        column,
        label: spec.default_term_labels()[column].clone(),
    })?;
    let resid = &yv - &x * &beta;

    let means: Vec<f64> = (0..jn)
        .map(|j| data.units(j).map(|i| resid[i]).sum::<f64>() / data.cluster_size(j) as f64)
        .collect();
    let within: f64 = (0..n).map(|i| (resid[i] - means[data.cluster_of(i)]).powi(2)).sum();
    let total_var = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let mut sigma2 = if n > jn { within / (n - jn) as f64 } else { total_var / 2.0 };
    if !(sigma2 > 0.0) {
        sigma2 = total_var.max(1.0);
    }
    let grand = means.iter().sum::<f64>() / jn as f64;
    let between = if jn > 1 { means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (jn - 1) as f64 } else { 0.0 };
    let mean_inv_n = (0..jn).map(|j| 1.0 / data.cluster_size(j) as f64).sum::<f64>() / jn as f64;
    let tau = (between - sigma2 * mean_inv_n).max(1e-3 * sigma2);
    let u = (0..jn)
        .map(|j| {
            let nj = data.cluster_size(j) as f64;
            means[j] * tau / (tau + sigma2 / nj)
        })
        .collect();

    let width = 1 + spec.q2();
    let w = DMatrix::from_fn(jn, width, |j, col| if col == 0 { 1.0 } else { data.x2_row(j)[col - 1] });
    let mut alpha = DVector::<f64>::zeros(spec.n_alpha());
    let mut cres = DMatrix::<f64>::zeros(jn, p);
    for k in 0..p {
        let ck = DVector::from_fn(jn, |j, _| c[j * p + k]);
        let coef = linalg::least_squares(&w, &ck)
            .map_err(|col| Error::Data(format!("level-2 covariate column {col} is collinear")))?;
        alpha.rows_mut(k * width, width).copy_from(&coef);
        cres.set_column(k, &(ck - &w * coef));
    }
    let t = if jn > width {
        let mut t = cres.transpose() * &cres / (jn - width) as f64;
        linalg::symmetrize(&mut t);
        if linalg::is_spd(&t) {
            t
        } else {
            complete_case_covariance(data).unwrap_or_else(|_| priors.iw_scale.clone())
        }
    } else {
        priors.iw_scale.clone()
    };
    let params = Parameters { beta, tau, sigma2, alpha, t };
    params.validate(spec)?;
    Ok((params, u))
}
