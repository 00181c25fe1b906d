use rayon::prelude::*;

use super::init::InitStrategy;
use super::{ChainState, GibbsConfig, GibbsModel};
use crate::dist::RngStream;
use crate::error::{Error, Result};
use crate::model::{Dataset, HlmSpec, Parameters};

/// Column names of a recorded draw: `beta0..`, `tau`, `sigma2`, then
/// `alpha{k}_{m}` (component k, coefficient m of `[1 x2]`) and the upper
/// triangle of T as `T{r}{s}`.
pub fn parameter_names(spec: &HlmSpec) -> Vec<String> {
    let mut names: Vec<String> = (0..spec.n_fixed()).map(|m| format!("beta{m}")).collect();
    names.push("tau".into());
    names.push("sigma2".into());
    for k in 0..spec.p() {
        for m in 0..=spec.q2() {
            names.push(format!("alpha{}_{m}", k + 1));
        }
    }
    for r in 0..spec.p() {
        for s in r..spec.p() {
            names.push(format!("T{}{}", r + 1, s + 1));
        }
    }
    names
}

fn flatten(params: &Parameters, out: &mut Vec<f64>) {
    out.extend_from_slice(params.beta.as_slice());
    out.push(params.tau);
    out.push(params.sigma2);
    out.extend_from_slice(params.alpha.as_slice());
    let p = params.t.nrows();
    for r in 0..p {
        for s in r..p {
            out.push(params.t[(r, s)]);
        }
    }
}

/// Kept draws of one chain, row-major (`n_kept × n_columns`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub columns: Vec<String>,
    pub draws: Vec<f64>,
    /// Names of the latent columns when latent recording is on:
    /// `u{j}`, then `Y_{i}` for missing outcomes, then `C{k}_{j}` for missing covariates.
    pub latent_columns: Vec<String>,
    pub latent: Vec<f64>,
    pub final_state: ChainState,
}

impl ChainRecord {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn n_kept(&self) -> usize {
        if self.columns.is_empty() {
            0
        } else {
            self.draws.len() / self.columns.len()
        }
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.draws.iter().skip(idx).step_by(self.columns.len()).copied().collect()
    }

    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        self.columns.iter().position(|c| c == name).map(|idx| self.column(idx))
    }

    pub fn row(&self, iteration: usize) -> &[f64] {
        let w = self.columns.len();
        &self.draws[iteration * w..(iteration + 1) * w]
    }

    /// Builds a record from saved draws (no final state available).
    pub fn from_columns(columns: Vec<String>, draws: Vec<f64>, template: ChainState) -> Result<Self> {
        if columns.is_empty() || draws.len() % columns.len() != 0 {
            return Err(Error::dim("draw matrix does not match the column count"));
        }
        Ok(Self { columns, draws, latent_columns: Vec::new(), latent: Vec::new(), final_state: template })
    }
}

fn latent_columns(data: &Dataset) -> Vec<String> {
    let mut names: Vec<String> = (0..data.n_clusters()).map(|j| format!("u{}", j + 1)).collect();
    for i in 0..data.n_units() {
        if !data.y_observed()[i] {
            names.push(format!("Y_{}", i + 1));
        }
    }
    let p = data.p();
    for j in 0..data.n_clusters() {
        for k in 0..p {
            if !data.c_is_observed(j, k) {
                names.push(format!("C{}_{}", k + 1, j + 1));
            }
        }
    }
    names
}

/// Runs `burn_in + kept` cycles from `init`, recording the kept draws.
pub fn run_chain(model: &GibbsModel<'_>, config: &GibbsConfig, init: ChainState, rng: &mut RngStream) -> Result<ChainRecord> {
    config.validate()?;
    init.params.validate(model.spec)?;
    let columns = parameter_names(model.spec);
    let lat_cols = if config.record_latent { latent_columns(model.data) } else { Vec::new() };
    let mut draws = Vec::with_capacity(columns.len() * config.kept);
    let mut latent = Vec::with_capacity(lat_cols.len() * config.kept);
    let mut state = init;
    for cycle in 0..config.burn_in + config.kept {
        model.cycle(&mut state, rng, cycle)?;
        if cycle >= config.burn_in {
            flatten(&state.params, &mut draws);
            if config.record_latent {
                latent.extend_from_slice(&state.u);
                latent.extend(state.y_imputed(model.data));
                latent.extend(state.c_imputed(model.data));
            }
        }
    }
    Ok(ChainRecord { columns, draws, latent_columns: lat_cols, latent, final_state: state })
}

/// Runs `n_chains` chains with distinct starting fills (chain 1 predictive
/// mean matching, chain 2 column means, further chains random donors; a
/// lone chain uses column means). Chain `k` draws from stream `k` of
/// `config.seed`.
pub fn run_chains(model: &GibbsModel<'_>, config: &GibbsConfig) -> Result<Vec<ChainRecord>> {
    config.validate()?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(config.seed, k as u64);
            let init = InitStrategy::for_chain(k, config.n_chains).initial_state(model.spec, model.data, model.priors, &mut rng)?;
            run_chain(model, config, init, &mut rng)
        })
        .collect()
}
