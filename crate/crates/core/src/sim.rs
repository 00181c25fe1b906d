//! Simulation scenarios, missingness mechanisms and replication studies.
//!
//! All scenarios share one known level-2 covariate `X_j` and two cluster
//! covariates `C_1j, C_2j`, with `n_j` units per cluster.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::diagnostics::{convergence_report, default_monitored, pooled_summaries, PosteriorSummary};
use crate::dist::{derive_seed, draw_normal, RngStream};
use crate::error::{Error, Result};
use crate::gibbs::{run_chains, GibbsConfig, GibbsModel, PriorConfig};
use crate::linalg;
use crate::model::{Dataset, DatasetParts, HlmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Normal covariates, MAR missingness, one `C1·C2` interaction.
    Baseline,
    /// `C1` log-normal, `C2` depending on `C1`; analysis model unchanged.
    LognormalCovariate,
    /// Baseline data, covariate missingness driven by the value of `C1`.
    Mnar,
    /// Baseline data generated and analysed with `C1·X` and `C2·X` terms.
    ExtraInteractions,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::LognormalCovariate => "lognormal-covariate",
            Scenario::Mnar => "mnar",
            Scenario::ExtraInteractions => "extra-interactions",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Scenario::Baseline),
            "lognormal-covariate" | "lognormal" => Ok(Scenario::LognormalCovariate),
            "mnar" => Ok(Scenario::Mnar),
            "extra-interactions" => Ok(Scenario::ExtraInteractions),
            other => Err(Error::Config(format!(
                "unknown scenario '{other}' (expected baseline, lognormal-covariate, mnar or extra-interactions)"
            ))),
        }
    }
}

/// How `(C1, C2)` are generated given `X`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateLaw {
    /// `(C1, C2) ~ N((a1 + b1 X, a2 + b2 X), T)`.
    JointNormal { intercept: [f64; 2], slope: [f64; 2], t: [[f64; 2]; 2] },
    /// `log C1 ~ N(a + b X, v)`, then `C2 ~ N(c0 + c1 C1 + c2 X, w)`.
    LognormalChain {
        log_intercept: f64,
        log_slope: f64,
        log_variance: f64,
        c2_intercept: f64,
        c2_on_c1: f64,
        c2_on_x: f64,
        c2_variance: f64,
    },
}

/// Variable a mask applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskTarget {
    Y,
    /// Cluster covariate `C_{k+1}`.
    C(usize),
}

/// Cluster-level variable driving the missingness probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Level-2 known covariate column.
    X2(usize),
    /// Pre-masking value of cluster covariate `C_{k+1}`.
    C(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MissingnessLaw {
    /// `logit p_j ~ N(c0 + c1·driver_j, delta)`.
    Mar { c0: f64, c1: f64, delta: f64 },
    /// `logit p_j = d0 + d1·driver_j`.
    Mnar { d0: f64, d1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskRule {
    pub target: MaskTarget,
    pub driver: Driver,
    pub law: MissingnessLaw,
}

impl MaskRule {
    pub fn validate(&self) -> Result<()> {
        if let MissingnessLaw::Mar { delta, .. } = self.law {
            if !(delta >= 0.0) {
                return Err(Error::Config(format!("MAR variance delta must be >= 0, got {delta}")));
            }
        }
        Ok(())
    }
}

/// Default MAR outcome mask.
pub const Y_MAR: MissingnessLaw = MissingnessLaw::Mar { c0: -1.9, c1: 0.1, delta: 1.0 };
pub const C1_MAR: MissingnessLaw = MissingnessLaw::Mar { c0: 0.8, c1: -1.5, delta: 0.0 };
pub const C2_MAR: MissingnessLaw = MissingnessLaw::Mar { c0: -2.8, c1: 0.5, delta: 0.0 };
pub const C1_MNAR: MissingnessLaw = MissingnessLaw::Mnar { d0: -5.0, d1: 1.3 };
pub const C2_MNAR: MissingnessLaw = MissingnessLaw::Mnar { d0: -10.5, d1: 3.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDesign {
    pub scenario: Scenario,
    pub clusters: usize,
    pub cluster_size: usize,
    /// True β in the design order of [`SimulationDesign::spec`].
    pub beta: Vec<f64>,
    pub tau: f64,
    pub sigma2: f64,
    pub x_mean: f64,
    pub x_variance: f64,
    pub covariates: CovariateLaw,
    pub masks: Vec<MaskRule>,
}

impl SimulationDesign {
    /// Scenario defaults: `n_j = 4`, all β = 1, τ = 4, σ² = 16, X ~ N(2, 1).
    pub fn new(scenario: Scenario, clusters: usize) -> Self {
        let spec = Self::spec_for(scenario);
        let covariates = match scenario {
            Scenario::LognormalCovariate => CovariateLaw::LognormalChain {
                log_intercept: 0.5,
                log_slope: 0.1,
                log_variance: 0.2,
                c2_intercept: 1.0,
                c2_on_c1: 0.1,
                c2_on_x: 0.3,
                c2_variance: 1.0,
            },
            _ => CovariateLaw::JointNormal {
                intercept: [0.75, -0.5],
                slope: [0.7, 1.0],
                t: [[1.25, -0.5], [-0.5, 1.0]],
            },
        };
        let y = MaskRule { target: MaskTarget::Y, driver: Driver::X2(0), law: Y_MAR };
        let masks = match scenario {
            Scenario::Mnar => vec![
                y,
                MaskRule { target: MaskTarget::C(0), driver: Driver::C(0), law: C1_MNAR },
                MaskRule { target: MaskTarget::C(1), driver: Driver::C(0), law: C2_MNAR },
            ],
            _ => vec![
                y,
                MaskRule { target: MaskTarget::C(0), driver: Driver::X2(0), law: C1_MAR },
                MaskRule { target: MaskTarget::C(1), driver: Driver::X2(0), law: C2_MAR },
            ],
        };
        Self {
            scenario,
            clusters,
            cluster_size: 4,
            beta: vec![1.0; spec.n_fixed()],
            tau: 4.0,
            sigma2: 16.0,
            x_mean: 2.0,
            x_variance: 1.0,
            covariates,
            masks,
        }
    }

    fn spec_for(scenario: Scenario) -> HlmSpec {
        let xc = match scenario {
            Scenario::ExtraInteractions => vec![(0, 0), (1, 0)],
            _ => Vec::new(),
        };
        HlmSpec::new(2, 0, 1, xc, vec![(0, 1)]).expect("scenario specs are valid")
    }

    /// Analysis model: `1, C1, C2, X`, any `C·X` terms, then `C1·C2`.
    pub fn spec(&self) -> HlmSpec {
        Self::spec_for(self.scenario)
    }

    /// Names and true values of the monitored parameters (β block, τ, σ²).
    pub fn truth(&self) -> (Vec<String>, Vec<f64>) {
        let names = default_monitored(&self.spec());
        let mut values = self.beta.clone();
        values.push(self.tau);
        values.push(self.sigma2);
        (names, values)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec();
        if self.clusters < 2 || self.cluster_size < 1 {
            return Err(Error::Config("need at least 2 clusters of at least 1 unit".into()));
        }
        if self.beta.len() != spec.n_fixed() {
            return Err(Error::Config(format!("scenario needs {} beta values, got {}", spec.n_fixed(), self.beta.len())));
        }
        if !(self.tau > 0.0 && self.sigma2 > 0.0 && self.x_variance >= 0.0) {
            return Err(Error::Config("variances must be positive".into()));
        }
        if let CovariateLaw::JointNormal { t, .. } = &self.covariates {
            let m = DMatrix::from_row_slice(2, 2, &[t[0][0], t[0][1], t[1][0], t[1][1]]);
            linalg::require_spd(&m, "covariate covariance")
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        for rule in &self.masks {
            rule.validate()?;
            if let MaskTarget::C(k) = rule.target {
                if k >= 2 {
                    return Err(Error::Config(format!("mask target C{} does not exist", k + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Draws one complete data set from `design` (all cells observed).
pub fn simulate_dataset(design: &SimulationDesign, rng: &mut RngStream) -> Result<Dataset> {
    design.validate()?;
    let spec = design.spec();
    let jn = design.clusters;
    let nj = design.cluster_size;
    let mut x2 = Vec::with_capacity(jn);
    let mut c = Vec::with_capacity(2 * jn);
    let chol = match &design.covariates {
        CovariateLaw::JointNormal { t, .. } => Some(
            linalg::cholesky_lower(&DMatrix::from_row_slice(2, 2, &[t[0][0], t[0][1], t[1][0], t[1][1]]), 1e-14)
                .map_err(|_| Error::Config("covariate covariance is singular".into()))?,
        ),
        _ => None,
    };
    for _ in 0..jn {
        let x = draw_normal(design.x_mean, design.x_variance, rng)?;
        let (c1, c2) = match &design.covariates {
            CovariateLaw::JointNormal { intercept, slope, .. } => {
                let l = chol.as_ref().expect("factor computed for the joint law");
                let z = DVector::from_vec(vec![rng.standard_normal(), rng.standard_normal()]);
                let e = l * z;
                (intercept[0] + slope[0] * x + e[0], intercept[1] + slope[1] * x + e[1])
            }
            CovariateLaw::LognormalChain {
                log_intercept,
                log_slope,
                log_variance,
                c2_intercept,
                c2_on_c1,
                c2_on_x,
                c2_variance,
            } => {
                let c1 = draw_normal(log_intercept + log_slope * x, *log_variance, rng)?.exp();
                let c2 = draw_normal(c2_intercept + c2_on_c1 * c1 + c2_on_x * x, *c2_variance, rng)?;
                (c1, c2)
            }
        };
        x2.push(x);
        c.push(c1);
        c.push(c2);
    }
    let mut y = Vec::with_capacity(jn * nj);
    let mut row = vec![0.0; spec.n_fixed()];
    for j in 0..jn {
        let u = draw_normal(0.0, design.tau, rng)?;
        spec.fill_design(&[], &x2[j..j + 1], &c[2 * j..2 * j + 2], &mut row);
        let fixed: f64 = row.iter().zip(&design.beta).map(|(a, b)| a * b).sum();
        for _ in 0..nj {
            y.push(fixed + u + draw_normal(0.0, design.sigma2, rng)?);
        }
    }
    Dataset::new(DatasetParts {
        cluster_sizes: vec![nj; jn],
        y_observed: vec![true; y.len()],
        y,
        q1: 0,
        x1: Vec::new(),
        q2: 1,
        x2,
        p: 2,
        c_observed: vec![true; c.len()],
        c,
    })
}

pub fn inverse_logit(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Missingness probability for one cluster under `law` at driver value `d`.
/// MAR laws consume one normal draw (none when `delta = 0`).
pub fn missing_probability(law: &MissingnessLaw, d: f64, rng: &mut RngStream) -> Result<f64> {
    let logit = match *law {
        MissingnessLaw::Mar { c0, c1, delta } => draw_normal(c0 + c1 * d, delta, rng)?,
        MissingnessLaw::Mnar { d0, d1 } => d0 + d1 * d,
    };
    Ok(inverse_logit(logit))
}

/// Applies each rule in order. Masked cells keep their stored values; cells
/// already missing stay missing. Drivers always read the stored
/// (pre-masking) values.
pub fn apply_missingness(data: &Dataset, rules: &[MaskRule], rng: &mut RngStream) -> Result<Dataset> {
    let p = data.p();
    let mut y_obs = data.y_observed().to_vec();
    let mut c_obs = data.c_observed().to_vec();
    for rule in rules {
        rule.validate()?;
        let driver = |j: usize| -> Result<f64> {
            let v = match rule.driver {
                Driver::X2(col) if col < data.q2() => data.x2_row(j)[col],
                Driver::C(k) if k < p => data.c_row_raw(j)[k],
                other => return Err(Error::Config(format!("unknown missingness driver {other:?}"))),
            };
            if !v.is_finite() {
                return Err(Error::Data(format!("driver {:?} has no stored value in cluster {j}", rule.driver)));
            }
            Ok(v)
        };
        if let MaskTarget::C(k) = rule.target {
            if k >= p {
                return Err(Error::Config(format!("unknown mask target C{}", k + 1)));
            }
        }
        for j in 0..data.n_clusters() {
            let prob = missing_probability(&rule.law, driver(j)?, rng)?;
            match rule.target {
                MaskTarget::Y => {
                    for i in data.units(j) {
                        if rng.bernoulli(prob) {
                            y_obs[i] = false;
                        }
                    }
                }
                MaskTarget::C(k) => {
                    if rng.bernoulli(prob) {
                        c_obs[j * p + k] = false;
                    }
                }
            }
        }
    }
    data.with_masks(y_obs, c_obs)
}

/// Missing fractions `(Y, [C1, .., Cp])`.
pub fn missing_rates(data: &Dataset) -> (f64, Vec<f64>) {
    let y = data.n_missing_y() as f64 / data.n_units() as f64;
    let p = data.p();
    let c = (0..p)
        .map(|k| (0..data.n_clusters()).filter(|&j| !data.c_is_observed(j, k)).count() as f64 / data.n_clusters() as f64)
        .collect();
    (y, c)
}

/// Result of one successful replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub index: usize,
    pub summaries: Vec<PosteriorSummary>,
    pub geweke_pass: bool,
    /// `None` for single-chain runs.
    pub psrf_pass: Option<bool>,
    pub missing_y: f64,
    pub missing_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterRow {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub pct_bias: f64,
    pub ase: f64,
    pub ese: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub scenario: Scenario,
    pub clusters: usize,
    pub cluster_size: usize,
    pub requested: usize,
    pub rows: Vec<ParameterRow>,
    pub geweke_pass_rate: f64,
    pub psrf_pass_rate: Option<f64>,
    /// ESE is undefined with fewer than two successful replications and is reported as 0.
    pub ese_degenerate: bool,
    pub outcomes: Vec<ReplicationOutcome>,
    pub failures: Vec<(usize, String)>,
}

impl ReplicationReport {
    pub fn successes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn row(&self, name: &str) -> Option<&ParameterRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Aggregates per-replication summaries: %bias of the mean estimate, ASE as
/// the mean posterior SD, ESE as the SD of the estimates and coverage of the
/// equal-tailed intervals.
pub fn aggregate(
    design: &SimulationDesign,
    requested: usize,
    outcomes: Vec<ReplicationOutcome>,
    failures: Vec<(usize, String)>,
) -> ReplicationReport {
    let (names, truth) = design.truth();
    let r = outcomes.len();
    let rows = names
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(idx, (name, &t))| {
            if r == 0 {
                return ParameterRow { name: name.clone(), truth: t, mean_estimate: f64::NAN, pct_bias: f64::NAN, ase: f64::NAN, ese: f64::NAN, coverage: f64::NAN };
            }
            let est: Vec<f64> = outcomes.iter().map(|o| o.summaries[idx].mean).collect();
            let mean_est = est.iter().sum::<f64>() / r as f64;
            let ese = if r > 1 {
                (est.iter().map(|e| (e - mean_est).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
            } else {
                0.0
            };
            let ase = outcomes.iter().map(|o| o.summaries[idx].sd).sum::<f64>() / r as f64;
            let covered = outcomes.iter().filter(|o| o.summaries[idx].covers(t)).count();
            ParameterRow {
                name: name.clone(),
                truth: t,
                mean_estimate: mean_est,
                pct_bias: (mean_est - t) * 100.0 / t,
                ase,
                ese,
                coverage: covered as f64 / r as f64,
            }
        })
        .collect();
    let rate = |f: &dyn Fn(&ReplicationOutcome) -> bool| {
        if r == 0 {
            f64::NAN
        } else {
            outcomes.iter().filter(|o| f(o)).count() as f64 / r as f64
        }
    };
    let geweke_pass_rate = rate(&|o| o.geweke_pass);
    let psrf_pass_rate = if outcomes.iter().all(|o| o.psrf_pass.is_some()) && r > 0 {
        Some(rate(&|o| o.psrf_pass == Some(true)))
    } else {
        None
    };
    ReplicationReport {
        scenario: design.scenario,
        clusters: design.clusters,
        cluster_size: design.cluster_size,
        requested,
        rows,
        geweke_pass_rate,
        psrf_pass_rate,
        ese_degenerate: r < 2,
        outcomes,
        failures,
    }
}

/// Simulates, masks and fits one replication.
pub fn run_replication(design: &SimulationDesign, index: usize, config: &GibbsConfig) -> Result<ReplicationOutcome> {
    let rep_seed = derive_seed(config.seed, index as u64);
    let mut data_rng = RngStream::new(rep_seed, u64::MAX);
    let complete = simulate_dataset(design, &mut data_rng)?;
    let data = apply_missingness(&complete, &design.masks, &mut data_rng)?;
    let spec = design.spec();
    let priors = PriorConfig::from_data(&data)?;
    let model = GibbsModel::new(&spec, &data, &priors)?;
    let chain_config = GibbsConfig { seed: rep_seed, record_latent: false, ..config.clone() };
    let chains = run_chains(&model, &chain_config)?;
    let monitored = default_monitored(&spec);
    let summaries = pooled_summaries(&chains, &monitored, 0.95)?;
    let conv = convergence_report(&chains, &monitored)?;
    let (missing_y, missing_c) = missing_rates(&data);
    Ok(ReplicationOutcome {
        index,
        summaries,
        geweke_pass: conv.geweke_all_pass(),
        psrf_pass: (chains.len() >= 2).then(|| conv.psrf_all_pass()),
        missing_y,
        missing_c,
    })
}

/// Runs `replications` independent replications on up to `workers` threads.
/// Replication `r` derives all of its randomness from `(config.seed, r)`, so
/// the report does not depend on the worker count.
pub fn run_replications(
    design: &SimulationDesign,
    replications: usize,
    config: &GibbsConfig,
    workers: usize,
) -> Result<ReplicationReport> {
    if replications == 0 {
        return Err(Error::Config("at least one replication is required".into()));
    }
    design.validate()?;
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<ReplicationOutcome>> =
        pool.install(|| (0..replications).into_par_iter().map(|r| run_replication(design, r, config)).collect());
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    Ok(aggregate(design, replications, outcomes, failures))
}
