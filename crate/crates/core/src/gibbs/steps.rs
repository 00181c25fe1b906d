use nalgebra::{DMatrix, DVector};

use super::conditional::{conditional_moments_c, mu_split, posterior_c_kj, ConditionalMoments};
use super::{dot, ChainState, GibbsModel};
use crate::dist::{draw_inverse_gamma, draw_inverse_wishart, draw_mvn_from_precision_factor, draw_normal, RngStream};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{covariate_design, covariate_mean};

/// Pivot floor for the fixed-effect cross-product matrix.
const DESIGN_PIVOT_TOL: f64 = 1e-10;

impl GibbsModel<'_> {
    /// Runs one full cycle. Errors carry the cycle index and the failing step.
    pub fn cycle(&self, state: &mut ChainState, rng: &mut RngStream, cycle: usize) -> Result<()> {
        let wrap = |step: &'static str| move |e: Error| Error::Step { cycle, step, source: Box::new(e) };
        self.step_u(state, rng).map_err(wrap("random effects u"))?;
        self.step_tau(state, rng).map_err(wrap("tau"))?;
        self.step_beta(state, rng).map_err(wrap("beta"))?;
        self.step_sigma2(state, rng).map_err(wrap("sigma2"))?;
        self.step_impute_y(state, rng).map_err(wrap("impute Y"))?;
        self.step_alpha(state, rng).map_err(wrap("alpha"))?;
        self.step_t(state, rng).map_err(wrap("T"))?;
        self.step_impute_c(state, rng).map_err(wrap("impute C"))?;
        Ok(())
    }

    /// `u_j ~ N(Δ⁻¹ σ⁻² Σᵢ (Y_ij − X_ijᵀβ), Δ⁻¹)`, `Δ = n_j/σ² + 1/τ`.
    pub fn step_u(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let fixed = self.fixed_predictor(state);
        let (sigma2, tau) = (state.params.sigma2, state.params.tau);
        for j in 0..self.data.n_clusters() {
            let resid: f64 = self.data.units(j).map(|i| state.y[i] - fixed[i]).sum();
            let precision = self.data.cluster_size(j) as f64 / sigma2 + 1.0 / tau;
            state.u[j] = draw_normal(resid / sigma2 / precision, 1.0 / precision, rng)?;
        }
        Ok(())
    }

    /// Precision `1/τ ~ Gamma(J/2 + α₀, Σ u_j²/2 + 1/β₀)`.
    pub fn step_tau(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let shape = self.data.n_clusters() as f64 / 2.0 + self.priors.ig_shape;
        let rate = state.u.iter().map(|u| u * u).sum::<f64>() / 2.0 + self.priors.ig_rate();
        state.params.tau = draw_inverse_gamma(shape, rate, rng)?;
        Ok(())
    }

    /// `β ~ N((ΣXXᵀ)⁻¹ ΣX(Y − u), σ² (ΣXXᵀ)⁻¹)`.
    pub fn step_beta(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let d = self.spec.n_fixed();
        let mut xtx = DMatrix::<f64>::zeros(d, d);
        let mut xty = DVector::<f64>::zeros(d);
        let mut row = vec![0.0; d];
        for i in 0..self.data.n_units() {
            self.design_row(&state.c, i, &mut row);
            let target = state.y[i] - state.u[self.data.cluster_of(i)];
            for a in 0..d {
                let ra = row[a];
                xty[a] += ra * target;
                for b in 0..=a {
                    xtx[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                xtx[(b, a)] = xtx[(a, b)];
            }
        }
        let l = linalg::cholesky_lower(&xtx, DESIGN_PIVOT_TOL).map_err(|column| Error::SingularDesign {
            column,
            label: self.spec.default_term_labels()[column].clone(),
        })?;
        let mean = linalg::cholesky_solve(&l, &xty);
        state.params.beta = draw_mvn_from_precision_factor(&mean, &l, state.params.sigma2.sqrt(), rng);
        Ok(())
    }

    /// Precision `1/σ² ~ Gamma(N/2 + α₀, Σ e_ij²/2 + 1/β₀)`.
    pub fn step_sigma2(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let fixed = self.fixed_predictor(state);
        let sse: f64 = (0..self.data.n_units())
            .map(|i| {
                let e = state.y[i] - fixed[i] - state.u[self.data.cluster_of(i)];
                e * e
            })
            .sum();
        let shape = self.data.n_units() as f64 / 2.0 + self.priors.ig_shape;
        state.params.sigma2 = draw_inverse_gamma(shape, sse / 2.0 + self.priors.ig_rate(), rng)?;
        Ok(())
    }

    /// Missing `Y_ij = X_ijᵀβ + u_j + e_ij`, `e_ij ~ N(0, σ²)`.
    pub fn step_impute_y(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        if self.data.n_missing_y() == 0 {
            return Ok(());
        }
        let mut row = vec![0.0; self.spec.n_fixed()];
        for i in 0..self.data.n_units() {
            if self.data.y_observed()[i] {
                continue;
            }
            self.design_row(&state.c, i, &mut row);
            let mean = dot(&row, state.params.beta.as_slice()) + state.u[self.data.cluster_of(i)];
            state.y[i] = draw_normal(mean, state.params.sigma2, rng)?;
        }
        Ok(())
    }

    /// `α ~ N((ΣWᵀT⁻¹W)⁻¹ ΣWᵀT⁻¹C_j, (ΣWᵀT⁻¹W)⁻¹)`.
    pub fn step_alpha(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let p = self.spec.p();
        let t_inv = linalg::spd_inverse(&state.params.t, "T")?;
        let na = self.spec.n_alpha();
        let mut precision = DMatrix::<f64>::zeros(na, na);
        let mut rhs = DVector::<f64>::zeros(na);
        for j in 0..self.data.n_clusters() {
            let w = covariate_design(self.data.x2_row(j), p);
            let wt_tinv = w.transpose() * &t_inv;
            precision += &wt_tinv * &w;
            rhs += wt_tinv * DVector::from_column_slice(state.c_row(j, p));
        }
        linalg::symmetrize(&mut precision);
        let l = linalg::cholesky_lower(&precision, DESIGN_PIVOT_TOL).map_err(|col| {
            Error::NotPositiveDefinite(format!("covariate-model design is singular at alpha column {col}"))
        })?;
        let mean = linalg::cholesky_solve(&l, &rhs);
        state.params.alpha = draw_mvn_from_precision_factor(&mean, &l, 1.0, rng);
        Ok(())
    }

    /// `T ~ IW(V₀ + J, S₀ + Σ (C_j − Wα)(C_j − Wα)ᵀ)`.
    pub fn step_t(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        let p = self.spec.p();
        let mut scale = self.priors.iw_scale.clone();
        for j in 0..self.data.n_clusters() {
            let r = DVector::from_column_slice(state.c_row(j, p)) - covariate_mean(self.data.x2_row(j), &state.params.alpha, p);
            scale += &r * r.transpose();
        }
        linalg::symmetrize(&mut scale);
        let dof = self.priors.iw_dof + self.data.n_clusters() as f64;
        state.params.t = draw_inverse_wishart(dof, &scale, rng)?;
        Ok(())
    }

    /// Each missing `C_kj`, visiting `k` in ascending order within a
    /// cluster, drawn from its exact posterior given the current values of
    /// the other components.
    pub fn step_impute_c(&self, state: &mut ChainState, rng: &mut RngStream) -> Result<()> {
        if self.data.n_missing_c() == 0 {
            return Ok(());
        }
        let p = self.spec.p();
        for j in 0..self.data.n_clusters() {
            for k in 0..p {
                if self.data.c_is_observed(j, k) {
                    continue;
                }
                let (mean, variance) = self.posterior_c(state, j, k)?;
                state.c[j * p + k] = draw_normal(mean, variance, rng)?;
            }
        }
        Ok(())
    }

    /// Conditional prior of `C_kj` given the rest of the current `C_j`.
    pub fn conditional_c(&self, state: &ChainState, j: usize, k: usize) -> Result<ConditionalMoments> {
        let p = self.spec.p();
        let c_j = state.c_row(j, p);
        let others: Vec<f64> = (0..p).filter(|&r| r != k).map(|r| c_j[r]).collect();
        conditional_moments_c(k, &others, &state.params.alpha, &state.params.t, self.data.x2_row(j))
    }

    /// `(mean, variance)` of the exact posterior of `C_kj` under the current state.
    pub fn posterior_c(&self, state: &ChainState, j: usize, k: usize) -> Result<(f64, f64)> {
        let p = self.spec.p();
        let prior = self.conditional_c(state, j, k)?;
        let mut c = state.c_row(j, p).to_vec();
        let mut row = vec![0.0; self.spec.n_fixed()];
        let units = self.data.units(j);
        let mu: Vec<(f64, f64)> = units
            .clone()
            .map(|i| {
                mu_split(
                    self.spec,
                    state.params.beta.as_slice(),
                    self.data.x1_row(i),
                    self.data.x2_row(j),
                    &mut c,
                    state.u[j],
                    k,
                    &mut row,
                )
            })
            .collect();
        posterior_c_kj(&prior, &mu, &state.y[units], state.params.sigma2)
    }
}
