//! The exact-posterior Gibbs sampler.
//!
//! One cycle updates, in order: random effects `u`, `τ`, `β`, `σ²`, missing
//! outcomes, `α`, `T`, and finally each missing element of `C_j` from its
//! exact Gaussian posterior. Only missing cells are ever written.

mod chain;
mod conditional;
mod init;
mod steps;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{complete_case_covariance, Dataset, HlmSpec, Parameters};

pub use chain::{parameter_names, run_chain, run_chains, ChainRecord};
pub use conditional::{compute_mu1_mu2, conditional_moments_c, posterior_c_kj, ConditionalMoments};
pub use init::{fill_mean, fill_pmm, fill_random_donor, initial_parameters, InitStrategy};

/// Hyperparameters. `β` and `α` have flat priors.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Inverse-gamma shape α₀ for τ and σ².
    pub ig_shape: f64,
    /// Inverse-gamma β₀; the precision prior has rate `1/β₀`.
    pub ig_scale: f64,
    /// Inverse-Wishart degrees of freedom V₀.
    pub iw_dof: f64,
    /// Inverse-Wishart scale S₀.
    pub iw_scale: DMatrix<f64>,
}

impl PriorConfig {
    pub const DEFAULT_IG_SHAPE: f64 = 1.0;
    pub const DEFAULT_IG_SCALE: f64 = 0.5;

    /// Defaults with an explicit S₀ and `V₀ = p + 2`.
    pub fn with_scale(iw_scale: DMatrix<f64>) -> Result<Self> {
        let p = iw_scale.nrows();
        let cfg = Self {
            ig_shape: Self::DEFAULT_IG_SHAPE,
            ig_scale: Self::DEFAULT_IG_SCALE,
            iw_dof: p as f64 + 2.0,
            iw_scale,
        };
        cfg.validate(p)?;
        Ok(cfg)
    }

    /// Defaults with S₀ estimated from the complete cases of `data`.
    pub fn from_data(data: &Dataset) -> Result<Self> {
        Self::with_scale(complete_case_covariance(data)?)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.ig_shape > 0.0) || !(self.ig_scale > 0.0) {
            return Err(Error::arg("inverse-gamma hyperparameters must be positive"));
        }
        if !(self.iw_dof > p as f64 - 1.0) {
            return Err(Error::arg(format!("inverse-Wishart dof must exceed p - 1 = {}", p as f64 - 1.0)));
        }
        if self.iw_scale.nrows() != p || self.iw_scale.ncols() != p {
            return Err(Error::dim("inverse-Wishart scale must be p x p"));
        }
        linalg::require_spd(&self.iw_scale, "inverse-Wishart scale")
    }

    pub(crate) fn ig_rate(&self) -> f64 {
        1.0 / self.ig_scale
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub kept: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Also record `u` and the imputed cells at every kept iteration.
    pub record_latent: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { burn_in: 2500, kept: 2500, n_chains: 2, seed: 1, record_latent: false }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kept == 0 {
            return Err(Error::arg("at least one kept iteration is required"));
        }
        if self.n_chains == 0 {
            return Err(Error::arg("at least one chain is required"));
        }
        Ok(())
    }
}

/// Current draws of θ, the random effects and the completed data.
///
/// `y` (length N) and `c` (`J × p`, row-major) hold observed values at
/// observed cells and the current imputations elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: Parameters,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
}

impl ChainState {
    /// Builds a state from filled data, forcing observed cells back to their
    /// observed values.
    pub fn new(data: &Dataset, params: Parameters, u: Vec<f64>, mut y: Vec<f64>, mut c: Vec<f64>) -> Result<Self> {
        if u.len() != data.n_clusters() || y.len() != data.n_units() || c.len() != data.n_clusters() * data.p() {
            return Err(Error::dim("chain state does not match the data set"));
        }
        for (i, v) in y.iter_mut().enumerate() {
            if data.y_observed()[i] {
                *v = data.y_raw()[i];
            }
        }
        for (idx, v) in c.iter_mut().enumerate() {
            if data.c_observed()[idx] {
                *v = data.c_raw()[idx];
            }
        }
        if y.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(Error::Data("every missing cell needs a finite initial value".into()));
        }
        Ok(Self { params, u, y, c })
    }

    pub fn c_row(&self, j: usize, p: usize) -> &[f64] {
        &self.c[j * p..(j + 1) * p]
    }

    /// Current values of the missing outcome cells, in unit order.
    pub fn y_imputed(&self, data: &Dataset) -> Vec<f64> {
        self.y.iter().zip(data.y_observed()).filter(|(_, &o)| !o).map(|(v, _)| *v).collect()
    }

    /// Current values of the missing cluster-covariate cells, row-major.
    pub fn c_imputed(&self, data: &Dataset) -> Vec<f64> {
        self.c.iter().zip(data.c_observed()).filter(|(_, &o)| !o).map(|(v, _)| *v).collect()
    }
}

/// Data, model shape and priors bundled for the step functions.
#[derive(Debug, Clone, Copy)]
pub struct GibbsModel<'a> {
    pub spec: &'a HlmSpec,
    pub data: &'a Dataset,
    pub priors: &'a PriorConfig,
}

impl<'a> GibbsModel<'a> {
    pub fn new(spec: &'a HlmSpec, data: &'a Dataset, priors: &'a PriorConfig) -> Result<Self> {
        data.check_spec(spec)?;
        priors.validate(spec.p())?;
        Ok(Self { spec, data, priors })
    }

    /// Fixed-effect design row of unit `i` under the completed covariates in `c`.
    pub(crate) fn design_row(&self, c: &[f64], i: usize, out: &mut [f64]) {
        let j = self.data.cluster_of(i);
        let p = self.spec.p();
        self.spec.fill_design(self.data.x1_row(i), self.data.x2_row(j), &c[j * p..(j + 1) * p], out);
    }

    /// `X_ijᵀ β` for every unit.
    pub fn fixed_predictor(&self, state: &ChainState) -> Vec<f64> {
        let mut row = vec![0.0; self.spec.n_fixed()];
        (0..self.data.n_units())
            .map(|i| {
                self.design_row(&state.c, i, &mut row);
                dot(&row, state.params.beta.as_slice())
            })
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
