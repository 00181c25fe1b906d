//! Oracles and property checks shared by the integration tests and the
//! acceptance runner. Everything here recomputes the target quantities from
//! scratch with plain matrix algebra or numerical integration, without going
//! through the sampler's own helper routines.
#![allow(dead_code)]

use hlm_gibbs::gibbs::{compute_mu1_mu2, InitStrategy};
use hlm_gibbs::model::build_design_vector;
use hlm_gibbs::sim::{apply_missingness, simulate_dataset};
use hlm_gibbs::{
    psrf, geweke_z, run_chains, ChainState, Dataset, GibbsConfig, GibbsModel, HlmSpec, PriorConfig, RngStream, Scenario,
    SimulationDesign,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

// ---------------------------------------------------------------------------
// Moment checks

#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub estimate: f64,
    pub target: f64,
    pub se: f64,
}

impl Check {
    pub fn z(&self) -> f64 {
        (self.estimate - self.target) / self.se
    }

    pub fn within(&self, k: f64) -> bool {
        self.z().abs() < k
    }
}

/// Sample mean and variance of `draws` against targets, with Monte Carlo
/// standard errors from the sample second and fourth central moments.
pub fn moment_checks(label: &str, draws: &[f64], mean: f64, var: f64) -> [Check; 2] {
    let n = draws.len() as f64;
    let m = draws.iter().sum::<f64>() / n;
    let s2 = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = draws.iter().map(|d| (d - m).powi(4)).sum::<f64>() / n;
    [
        Check { label: format!("{label} mean"), estimate: m, target: mean, se: (s2 / n).sqrt() },
        Check { label: format!("{label} variance"), estimate: s2, target: var, se: ((m4 - s2 * s2) / n).sqrt() },
    ]
}

/// Standard error of the mean of a correlated series by non-overlapping batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let b = series.len() / batches;
    let means: Vec<f64> = (0..batches).map(|k| series[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Baseline fixture and a hand-written design for it

pub struct Fixture {
    pub spec: HlmSpec,
    pub data: Dataset,
    pub priors: PriorConfig,
}

impl Fixture {
    /// Masked baseline data (`1, C1, C2, X, C1·C2`).
    pub fn baseline(clusters: usize, seed: u64) -> Self {
        let design = SimulationDesign::new(Scenario::Baseline, clusters);
        let mut rng = RngStream::new(seed, 0);
        let complete = simulate_dataset(&design, &mut rng).unwrap();
        let data = apply_missingness(&complete, &design.masks, &mut rng).unwrap();
        let priors = PriorConfig::from_data(&data).unwrap();
        Self { spec: design.spec(), data, priors }
    }

    pub fn model(&self) -> GibbsModel<'_> {
        GibbsModel::new(&self.spec, &self.data, &self.priors).unwrap()
    }

    /// State after `cycles` full cycles from the mean fill.
    pub fn warm_state(&self, cycles: usize, rng: &mut RngStream) -> ChainState {
        let model = self.model();
        let mut state = InitStrategy::MeanFill.initial_state(&self.spec, &self.data, &self.priors, rng).unwrap();
        for t in 0..cycles {
            model.cycle(&mut state, rng, t).unwrap();
        }
        state
    }
}

/// Baseline design row `[1, c1, c2, x, c1 c2]`.
pub fn baseline_row(c1: f64, c2: f64, x: f64) -> [f64; 5] {
    [1.0, c1, c2, x, c1 * c2]
}

fn unit_row(data: &Dataset, state: &ChainState, i: usize) -> [f64; 5] {
    let j = data.cluster_of(i);
    baseline_row(state.c[2 * j], state.c[2 * j + 1], data.x2_row(j)[0])
}

fn row_dot(row: &[f64; 5], beta: &DVector<f64>) -> f64 {
    row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
}

// ---------------------------------------------------------------------------
// Frozen-state conditional oracles

pub struct QuadratureCheck {
    pub label: String,
    pub mc_mean: f64,
    pub mc_sd: f64,
    pub quad_mean: f64,
    pub quad_sd: f64,
}

impl QuadratureCheck {
    pub fn mean_rel(&self) -> f64 {
        ((self.mc_mean - self.quad_mean) / self.quad_mean).abs()
    }

    pub fn sd_rel(&self) -> f64 {
        ((self.mc_sd - self.quad_sd) / self.quad_sd).abs()
    }
}

pub struct ConditionalSuite {
    pub checks: Vec<Check>,
    pub quadrature: Vec<QuadratureCheck>,
}

fn collect<F: FnMut(&mut ChainState, &mut RngStream)>(state: &ChainState, n: usize, rng: &mut RngStream, mut step: F, read: &[&dyn Fn(&ChainState) -> f64]) -> Vec<Vec<f64>> {
    let mut s = state.clone();
    let mut out = vec![Vec::with_capacity(n); read.len()];
    for _ in 0..n {
        step(&mut s, rng);
        for (o, r) in out.iter_mut().zip(read) {
            o.push(r(&s));
        }
    }
    out
}

/// Log of the unnormalised conditional density of `C_kj` at `v`, built from
/// the covariate model and the full design rows.
fn log_density_c(fx: &Fixture, state: &ChainState, j: usize, k: usize, v: f64) -> f64 {
    let x = fx.data.x2_row(j)[0];
    let a = &state.params.alpha;
    let t = &state.params.t;
    let m = [a[0] + a[1] * x, a[2] + a[3] * x];
    let o = 1 - k;
    let c_o = state.c[2 * j + o];
    let cond_mean = m[k] + t[(k, o)] / t[(o, o)] * (c_o - m[o]);
    let cond_var = t[(k, k)] - t[(k, o)] * t[(k, o)] / t[(o, o)];
    let mut c = [state.c[2 * j], state.c[2 * j + 1]];
    c[k] = v;
    let row = baseline_row(c[0], c[1], x);
    let fitted = row_dot(&row, &state.params.beta) + state.u[j];
    let lik: f64 = fx.data.units(j).map(|i| (state.y[i] - fitted).powi(2)).sum::<f64>() / (2.0 * state.params.sigma2);
    -(v - cond_mean).powi(2) / (2.0 * cond_var) - lik
}

/// Mean and SD of a 1-D density by trapezoid quadrature over `[lo, hi]`.
pub fn quadrature_moments(lo: f64, hi: f64, points: usize, log_f: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let top = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, (&x, &l)) in xs.iter().zip(&lf).enumerate() {
        let w = if i == 0 || i + 1 == points { 0.5 } else { 1.0 } * (l - top).exp();
        z += w;
        m1 += w * x;
        m2 += w * x * x;
    }
    let mean = m1 / z;
    (mean, (m2 / z - mean * mean).sqrt())
}

/// Draws each Gibbs step `n` times from one frozen state and compares with
/// its exact conditional. Steps 1 to 7 are checked against closed-form
/// moments; the covariate imputation step against quadrature.
pub fn conditional_suite(n: usize, seed: u64) -> ConditionalSuite {
    let fx = Fixture::baseline(40, seed);
    let model = fx.model();
    let data = &fx.data;
    let mut rng = RngStream::new(seed, 1);
    let state = fx.warm_state(300, &mut rng);
    let p = &state.params;
    let jn = data.n_clusters();
    let nn = data.n_units();
    let mut checks = Vec::new();

    // u_j
    let picks = [0, jn / 2, jn - 1];
    for &j in &picks {
        let resid: f64 = data.units(j).map(|i| state.y[i] - row_dot(&unit_row(data, &state, i), &p.beta)).sum();
        let delta = data.cluster_size(j) as f64 / p.sigma2 + 1.0 / p.tau;
        let draws = collect(&state, n, &mut rng, |s, r| model.step_u(s, r).unwrap(), &[&move |s: &ChainState| s.u[j]]);
        checks.extend(moment_checks(&format!("u[{j}]"), &draws[0], resid / p.sigma2 / delta, 1.0 / delta));
    }

    // 1/τ ~ Gamma(J/2 + 1, Σu²/2 + 2)
    let shape = jn as f64 / 2.0 + 1.0;
    let rate = state.u.iter().map(|u| u * u).sum::<f64>() / 2.0 + 2.0;
    let draws = collect(&state, n, &mut rng, |s, r| model.step_tau(s, r).unwrap(), &[&|s: &ChainState| 1.0 / s.params.tau]);
    checks.extend(moment_checks("1/tau", &draws[0], shape / rate, shape / (rate * rate)));

    // β
    let mut xm = DMatrix::<f64>::zeros(nn, 5);
    let mut target = DVector::<f64>::zeros(nn);
    for i in 0..nn {
        let r = unit_row(data, &state, i);
        for a in 0..5 {
            xm[(i, a)] = r[a];
        }
        target[i] = state.y[i] - state.u[data.cluster_of(i)];
    }
    let xtx_inv = (xm.transpose() * &xm).try_inverse().unwrap();
    let beta_mean = &xtx_inv * xm.transpose() * &target;
    let readers: Vec<Box<dyn Fn(&ChainState) -> f64>> = (0..5).map(|a| Box::new(move |s: &ChainState| s.params.beta[a]) as Box<dyn Fn(&ChainState) -> f64>).collect();
    let refs: Vec<&dyn Fn(&ChainState) -> f64> = readers.iter().map(|b| b.as_ref()).collect();
    let draws = collect(&state, n, &mut rng, |s, r| model.step_beta(s, r).unwrap(), &refs);
    for a in 0..5 {
        checks.extend(moment_checks(&format!("beta{a}"), &draws[a], beta_mean[a], p.sigma2 * xtx_inv[(a, a)]));
    }

    // 1/σ² ~ Gamma(N/2 + 1, SSE/2 + 2)
    let sse: f64 = (0..nn)
        .map(|i| (state.y[i] - row_dot(&unit_row(data, &state, i), &p.beta) - state.u[data.cluster_of(i)]).powi(2))
        .sum();
    let shape = nn as f64 / 2.0 + 1.0;
    let rate = sse / 2.0 + 2.0;
    let draws = collect(&state, n, &mut rng, |s, r| model.step_sigma2(s, r).unwrap(), &[&|s: &ChainState| 1.0 / s.params.sigma2]);
    checks.extend(moment_checks("1/sigma2", &draws[0], shape / rate, shape / (rate * rate)));

    // Missing Y
    let i_mis = (0..nn).find(|&i| !data.y_observed()[i]).expect("fixture has a missing outcome");
    let y_mean = row_dot(&unit_row(data, &state, i_mis), &p.beta) + state.u[data.cluster_of(i_mis)];
    let draws = collect(&state, n, &mut rng, |s, r| model.step_impute_y(s, r).unwrap(), &[&move |s: &ChainState| s.y[i_mis]]);
    checks.extend(moment_checks(&format!("Y[{i_mis}]"), &draws[0], y_mean, p.sigma2));

    // α: precision Σ WᵀT⁻¹W
    let t_inv = p.t.clone().try_inverse().unwrap();
    let mut prec = DMatrix::<f64>::zeros(4, 4);
    let mut rhs = DVector::<f64>::zeros(4);
    for j in 0..jn {
        let x = data.x2_row(j)[0];
        let w = DMatrix::from_row_slice(2, 4, &[1.0, x, 0.0, 0.0, 0.0, 0.0, 1.0, x]);
        let cj = DVector::from_vec(vec![state.c[2 * j], state.c[2 * j + 1]]);
        prec += w.transpose() * &t_inv * &w;
        rhs += w.transpose() * &t_inv * cj;
    }
    let alpha_cov = prec.try_inverse().unwrap();
    let alpha_mean = &alpha_cov * rhs;
    let readers: Vec<Box<dyn Fn(&ChainState) -> f64>> = (0..4).map(|a| Box::new(move |s: &ChainState| s.params.alpha[a]) as Box<dyn Fn(&ChainState) -> f64>).collect();
    let refs: Vec<&dyn Fn(&ChainState) -> f64> = readers.iter().map(|b| b.as_ref()).collect();
    let draws = collect(&state, n, &mut rng, |s, r| model.step_alpha(s, r).unwrap(), &refs);
    for a in 0..4 {
        checks.extend(moment_checks(&format!("alpha[{a}]"), &draws[a], alpha_mean[a], alpha_cov[(a, a)]));
    }

    // T ~ IW(ν, S)
    let mut s_mat = fx.priors.iw_scale.clone();
    for j in 0..jn {
        let x = data.x2_row(j)[0];
        let a = &p.alpha;
        let r = DVector::from_vec(vec![state.c[2 * j] - a[0] - a[1] * x, state.c[2 * j + 1] - a[2] - a[3] * x]);
        s_mat += &r * r.transpose();
    }
    let nu = fx.priors.iw_dof + jn as f64;
    let pp = 2.0;
    let entries = [(0, 0), (0, 1), (1, 1)];
    let readers: Vec<Box<dyn Fn(&ChainState) -> f64>> = entries.iter().map(|&(a, b)| Box::new(move |s: &ChainState| s.params.t[(a, b)]) as Box<dyn Fn(&ChainState) -> f64>).collect();
    let refs: Vec<&dyn Fn(&ChainState) -> f64> = readers.iter().map(|b| b.as_ref()).collect();
    let draws = collect(&state, n, &mut rng, |s, r| model.step_t(s, r).unwrap(), &refs);
    for (e, &(a, b)) in entries.iter().enumerate() {
        let m = s_mat[(a, b)] / (nu - pp - 1.0);
        let v = ((nu - pp + 1.0) * s_mat[(a, b)].powi(2) + (nu - pp - 1.0) * s_mat[(a, a)] * s_mat[(b, b)])
            / ((nu - pp) * (nu - pp - 1.0).powi(2) * (nu - pp - 3.0));
        checks.extend(moment_checks(&format!("T[{a}{b}]"), &draws[e], m, v));
    }

    // Missing C in clusters with exactly one missing component.
    let mut cells: Vec<(usize, usize, f64, f64)> = Vec::new();
    for j in 0..jn {
        let miss: Vec<usize> = (0..2).filter(|&k| !data.c_is_observed(j, k)).collect();
        if miss.len() == 1 {
            let k = miss[0];
            let centre = state.c[2 * j + k];
            let (qm, qs) = quadrature_moments(centre - 60.0, centre + 60.0, 240_001, |v| log_density_c(&fx, &state, j, k, v));
            cells.push((j, k, qm, qs));
        }
    }
    cells.sort_by(|a, b| (b.2.abs() / b.3).total_cmp(&(a.2.abs() / a.3)));
    let mut quadrature = Vec::new();
    for &(j, k, qm, qs) in cells.iter().take(3) {
        let draws = collect(&state, n, &mut rng, |s, r| model.step_impute_c(s, r).unwrap(), &[&move |s: &ChainState| s.c[2 * j + k]]);
        let m = mean(&draws[0]);
        let sd = (draws[0].iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        quadrature.push(QuadratureCheck { label: format!("C{}[{j}]", k + 1), mc_mean: m, mc_sd: sd, quad_mean: qm, quad_sd: qs });
    }
    ConditionalSuite { checks, quadrature }
}

// ---------------------------------------------------------------------------
// Small-model brute-force posterior

/// Five clusters of two units: `(c_j, [x_1j, x_2j], [y_1j, y_2j])`.
pub const TINY: [(f64, [f64; 2], [f64; 2]); 5] = [
    (0.3, [-1.0, 0.5], [0.9, 2.4]),
    (-1.2, [0.8, -0.4], [-1.1, -2.7]),
    (0.9, [1.5, 0.1], [4.3, 2.2]),
    (2.1, [-0.6, 1.1], [3.0, 5.6]),
    (-0.4, [0.2, -1.3], [1.6, -0.8]),
];

pub fn tiny_dataset() -> (HlmSpec, Dataset) {
    use hlm_gibbs::model::DatasetParts;
    let mut parts = DatasetParts { q1: 1, q2: 0, p: 1, ..Default::default() };
    for (c, x, y) in TINY {
        parts.cluster_sizes.push(2);
        parts.y.extend(y);
        parts.y_observed.extend([true, true]);
        parts.x1.extend(x);
        parts.c.push(c);
        parts.c_observed.push(true);
    }
    (HlmSpec::new(1, 1, 0, vec![], vec![]).unwrap(), Dataset::new(parts).unwrap())
}

/// Posterior means of `(β0, βC, βX, τ, σ²)` for the tiny model under flat β
/// and inverse-gamma(1, rate 2) priors on τ and σ², by integrating the
/// random effects and β analytically and (log τ, log σ²) on a grid.
pub fn tiny_oracle() -> [f64; 5] {
    let (a0, rate) = (1.0, 2.0);
    let grid = 601;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / (grid - 1) as f64;
    let mut logs = Vec::with_capacity(grid * grid);
    let mut stats = Vec::with_capacity(grid * grid);
    for a in 0..grid {
        let tau = (lo + a as f64 * h).exp();
        for b in 0..grid {
            let s2 = (lo + b as f64 * h).exp();
            let mut xvx = nalgebra::Matrix3::<f64>::zeros();
            let mut xvy = nalgebra::Vector3::<f64>::zeros();
            let mut yvy = 0.0;
            let mut logdet_v = 0.0;
            for (c, x, y) in TINY {
                // V_j = s2 I + tau 11ᵀ;  V_j⁻¹ = (I − g 11ᵀ)/s2 with g = tau/(s2 + 2 tau).
                let g = tau / (s2 + 2.0 * tau);
                logdet_v += s2.ln() + (s2 + 2.0 * tau).ln();
                let rows = [nalgebra::Vector3::new(1.0, c, x[0]), nalgebra::Vector3::new(1.0, c, x[1])];
                let rsum = rows[0] + rows[1];
                let ysum = y[0] + y[1];
                xvx += (rows[0] * rows[0].transpose() + rows[1] * rows[1].transpose() - g * rsum * rsum.transpose()) / s2;
                xvy += (rows[0] * y[0] + rows[1] * y[1] - g * rsum * ysum) / s2;
                yvy += (y[0] * y[0] + y[1] * y[1] - g * ysum * ysum) / s2;
            }
            let chol = xvx.cholesky().unwrap();
            let bhat = chol.solve(&xvy);
            let quad = yvy - xvy.dot(&bhat);
            let logdet_x = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let prior = -(a0 + 1.0) * tau.ln() - rate / tau - (a0 + 1.0) * s2.ln() - rate / s2;
            let jac = tau.ln() + s2.ln();
            logs.push(prior + jac - 0.5 * logdet_v - 0.5 * logdet_x - 0.5 * quad);
            stats.push([bhat[0], bhat[1], bhat[2], tau, s2]);
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut acc = [0.0; 5];
    for (l, s) in logs.iter().zip(&stats) {
        let w = (l - top).exp();
        z += w;
        for k in 0..5 {
            acc[k] += w * s[k];
        }
    }
    acc.map(|v| v / z)
}

/// `(estimate, batch-means SE)` of the same five posterior means from one
/// Gibbs chain.
pub fn tiny_gibbs(kept: usize, seed: u64) -> [(f64, f64); 5] {
    let (spec, data) = tiny_dataset();
    let priors = PriorConfig::from_data(&data).unwrap();
    let model = GibbsModel::new(&spec, &data, &priors).unwrap();
    let config = GibbsConfig { burn_in: 2000, kept, n_chains: 1, seed, record_latent: false };
    let chain = run_chains(&model, &config).unwrap().remove(0);
    ["beta0", "beta1", "beta2", "tau", "sigma2"].map(|name| {
        let s = chain.series(name).unwrap();
        (mean(&s), batch_means_se(&s, 100))
    })
}

// ---------------------------------------------------------------------------
// Property suite

pub fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Random spec with `p ≤ 4`, `q1, q2 ≤ 2` and random interaction subsets.
pub fn spec_strategy() -> impl Strategy<Value = HlmSpec> {
    (1usize..=4, 0usize..=2, 0usize..=2)
        .prop_flat_map(|(p, q1, q2)| {
            let q = q1 + q2;
            let xc: Vec<(usize, usize)> = (0..p).flat_map(|s| (0..q).map(move |c| (s, c))).collect();
            let cc: Vec<(usize, usize)> = (0..p).flat_map(|s| (s + 1..p).map(move |t| (s, t))).collect();
            let nx = xc.len();
            let nc = cc.len();
            (Just((p, q1, q2, xc, cc)), proptest::collection::vec(any::<bool>(), nx), proptest::collection::vec(any::<bool>(), nc))
        })
        .prop_map(|((p, q1, q2, xc, cc), mx, mc)| {
            let xc = xc.into_iter().zip(mx).filter(|(_, m)| *m).map(|(v, _)| v).collect();
            let cc = cc.into_iter().zip(mc).filter(|(_, m)| *m).map(|(v, _)| v).collect();
            HlmSpec::new(p, q1, q2, xc, cc).unwrap()
        })
}

fn spec_inputs() -> impl Strategy<Value = (HlmSpec, Vec<f64>, Vec<f64>, Vec<f64>, f64, usize, f64, f64)> {
    spec_strategy().prop_flat_map(|spec| {
        let d = spec.n_fixed();
        (
            Just(spec.clone()),
            proptest::collection::vec(-3.0..3.0f64, d),
            proptest::collection::vec(-4.0..4.0f64, spec.q()),
            proptest::collection::vec(-4.0..4.0f64, spec.p()),
            -2.0..2.0f64,
            0..spec.p(),
            -5.0..5.0f64,
            -5.0..5.0f64,
        )
    })
}

/// `μ₁ + μ₂ v` equals the full linear predictor with `C_k = v`.
pub fn prop_mu_decomposition(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&spec_inputs(), |(spec, beta, x, c, u, k, v, _)| {
            let (mu1, mu2) = compute_mu1_mu2(&spec, &DVector::from_vec(beta.clone()), &x, &c, u, k).unwrap();
            let mut cv = c.clone();
            cv[k] = v;
            let d = build_design_vector(&spec, &x, &cv).unwrap();
            let full: f64 = d.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + u;
            prop_assert!(close(mu1 + mu2 * v, full, 1e-12), "{} vs {}", mu1 + mu2 * v, full);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// The design vector is affine in each single covariate.
pub fn prop_design_multilinear(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&(spec_inputs(), 0.0..1.0f64, any::<bool>()), |((spec, _, x, c, _, k, a, b), lambda, in_x)| {
            let at = |v: f64| -> Vec<f64> {
                let (mut x2, mut c2) = (x.clone(), c.clone());
                if in_x && !x2.is_empty() {
                    let idx = k % x2.len();
                    x2[idx] = v;
                } else {
                    c2[k] = v;
                }
                build_design_vector(&spec, &x2, &c2).unwrap()
            };
            let (da, db, dm) = (at(a), at(b), at(lambda * a + (1.0 - lambda) * b));
            for m in 0..dm.len() {
                let mix = lambda * da[m] + (1.0 - lambda) * db[m];
                prop_assert!(close(dm[m], mix, 1e-12), "entry {m}: {} vs {}", dm[m], mix);
            }
            prop_assert_eq!(dm[0], 1.0);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// PSRF is unchanged by `x ↦ a x + b` applied to every chain.
pub fn prop_psrf_affine(cases: u32) -> Result<(), String> {
    let chains = (2usize..=4, 10usize..=60).prop_flat_map(|(m, n)| proptest::collection::vec(proptest::collection::vec(-10.0..10.0f64, n), m));
    let scale = prop_oneof![-100.0..-0.01f64, 0.01..100.0f64];
    runner(cases)
        .run(&(chains, scale, -1e3..1e3f64), |(chains, a, b)| {
            let views: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            let moved: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| a * v + b).collect()).collect();
            let mviews: Vec<&[f64]> = moved.iter().map(Vec::as_slice).collect();
            let r0 = psrf(&views).unwrap().value;
            let r1 = psrf(&mviews).unwrap().value;
            prop_assert!(close(r0, r1, 1e-9), "{r0} vs {r1}");
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Negating a series negates its Geweke z.
pub fn prop_geweke_antisymmetric(cases: u32) -> Result<(), String> {
    runner(cases)
        .run(&proptest::collection::vec(-10.0..10.0f64, 50..300), |s| {
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let z0 = geweke_z(&s, 0.2, 0.5).unwrap();
            let z1 = geweke_z(&neg, 0.2, 0.5).unwrap();
            prop_assert!(close(z0.z, -z1.z, 1e-9), "{} vs {}", z0.z, z1.z);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Observed cells are never overwritten by the sampler, and masking is
/// reversible.
pub fn prop_mask_discipline(cases: u32) -> Result<(), String> {
    let inputs = (4usize..=10, any::<u64>()).prop_flat_map(|(j, seed)| {
        (Just(j), Just(seed), proptest::collection::vec(any::<bool>(), 3 * j), proptest::collection::vec(0.0..1.0f64, 2 * j))
    });
    runner(cases)
        .run(&inputs, |(j, seed, y_mask, c_draw)| {
            let design = SimulationDesign::new(Scenario::Baseline, j);
            let mut rng = RngStream::new(seed, 0);
            let complete = simulate_dataset(&design, &mut rng).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let n = complete.n_units();
            let mut y_obs: Vec<bool> = (0..n).map(|i| y_mask[i % y_mask.len()]).collect();
            y_obs[0] = true;
            // At most one cluster covariate missing per cluster keeps the β design identifiable.
            let c_obs: Vec<bool> = c_draw.iter().enumerate().map(|(idx, &u)| u > 0.3 || idx % 2 == 1).collect();
            let masked = complete.with_masks(y_obs.clone(), c_obs.clone()).unwrap();
            prop_assert_eq!(&masked.unmasked().unwrap(), &complete);

            let spec = design.spec();
            let priors = PriorConfig::with_scale(DMatrix::identity(2, 2)).unwrap();
            let model = GibbsModel::new(&spec, &masked, &priors).unwrap();
            let Ok(mut state) = InitStrategy::RandomDonor.initial_state(&spec, &masked, &priors, &mut rng) else {
                return Err(TestCaseError::reject("no donor for a fully missing column"));
            };
            for t in 0..3 {
                if model.cycle(&mut state, &mut rng, t).is_err() {
                    return Err(TestCaseError::reject("unidentifiable design"));
                }
                for i in 0..n {
                    if y_obs[i] {
                        prop_assert_eq!(state.y[i].to_bits(), complete.y_raw()[i].to_bits());
                    }
                }
                for (idx, &o) in c_obs.iter().enumerate() {
                    if o {
                        prop_assert_eq!(state.c[idx].to_bits(), complete.c_raw()[idx].to_bits());
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn mean_of(v: &[f64]) -> f64 {
    mean(v)
}
