//! Convergence diagnostics and posterior summaries.

use crate::error::{Error, Result};
use crate::gibbs::ChainRecord;
use crate::model::HlmSpec;

/// Two-sided 5% critical value for the Geweke z statistic.
pub const GEWEKE_CRITICAL: f64 = 1.96;
/// PSRF threshold below which a parameter counts as converged.
pub const PSRF_THRESHOLD: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GewekeResult {
    pub z: f64,
    /// Both segment variances were zero.
    pub degenerate: bool,
}

impl GewekeResult {
    pub fn pass(&self) -> bool {
        self.z.abs() < GEWEKE_CRITICAL
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Variance of a segment mean by batch means with `⌊√m⌋` batches.
fn batch_means_variance(seg: &[f64]) -> f64 {
    let m = seg.len();
    let batches = ((m as f64).sqrt().floor() as usize).max(2);
    let size = m / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&seg[b * size..(b + 1) * size])).collect();
    sample_variance(&means) * size as f64 / m as f64
}

/// Geweke z comparing the mean of the first `frac_a` of the series with the
/// mean of the last `frac_b`.
pub fn geweke_z(series: &[f64], frac_a: f64, frac_b: f64) -> Result<GewekeResult> {
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::arg(format!("Geweke fractions ({frac_a}, {frac_b}) must be positive and sum to at most 1")));
    }
    let n = series.len();
    let min_len = (10.0 / frac_a.min(frac_b)).ceil() as usize;
    if n < min_len {
        return Err(Error::arg(format!("Geweke needs at least {min_len} draws, got {n}")));
    }
    let na = (frac_a * n as f64).floor() as usize;
    let nb = (frac_b * n as f64).floor() as usize;
    let a = &series[..na];
    let b = &series[n - nb..];
    let diff = mean(a) - mean(b);
    let var = batch_means_variance(a) + batch_means_variance(b);
    if var <= 0.0 {
        let z = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Ok(GewekeResult { z, degenerate: true });
    }
    Ok(GewekeResult { z: diff / var.sqrt(), degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsrfResult {
    pub value: f64,
    /// Within-chain variance was zero.
    pub degenerate: bool,
}

impl PsrfResult {
    pub fn pass(&self) -> bool {
        self.value < PSRF_THRESHOLD
    }
}

/// Gelman–Rubin potential scale reduction `√(((n−1)/n·W + B/n)/W)`.
///
/// Degenerate case: with `W = 0` the value is 1 when all chains agree and
/// infinite otherwise.
pub fn psrf(chains: &[&[f64]]) -> Result<PsrfResult> {
    if chains.len() < 2 {
        return Err(Error::arg("PSRF needs at least two chains"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::arg("PSRF chains must have equal length"));
    }
    if n < 10 {
        return Err(Error::arg(format!("PSRF needs at least 10 draws per chain, got {n}")));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / chains.len() as f64;
    let b = n as f64 * sample_variance(&means);
    if w <= 0.0 {
        let value = if b == 0.0 { 1.0 } else { f64::INFINITY };
        return Ok(PsrfResult { value, degenerate: true });
    }
    let nf = n as f64;
    let pooled = (nf - 1.0) / nf * w + b / nf;
    Ok(PsrfResult { value: (pooled / w).sqrt(), degenerate: false })
}

/// Linear interpolation between order statistics of sorted data at `prob`.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PosteriorSummary {
    /// The equal-tailed interval excludes zero.
    pub fn significant(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Posterior mean, SD (n−1 divisor) and equal-tailed `level` interval.
pub fn posterior_summary(series: &[f64], level: f64) -> Result<PosteriorSummary> {
    if series.is_empty() {
        return Err(Error::arg("cannot summarize an empty series"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg(format!("credible level {level} must lie in (0, 1)")));
    }
    let m = mean(series);
    let sd = if series.len() > 1 { sample_variance(series).sqrt() } else { 0.0 };
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(PosteriorSummary { mean: m, sd, lower: quantile_sorted(&sorted, tail), upper: quantile_sorted(&sorted, 1.0 - tail) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterConvergence {
    pub name: String,
    pub geweke: GewekeResult,
    /// `None` for single-chain runs.
    pub psrf: Option<PsrfResult>,
}

impl ParameterConvergence {
    pub fn geweke_pass(&self) -> bool {
        self.geweke.pass()
    }

    pub fn psrf_pass(&self) -> bool {
        self.psrf.is_some_and(|p| p.pass())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub parameters: Vec<ParameterConvergence>,
}

impl ConvergenceReport {
    pub fn geweke_all_pass(&self) -> bool {
        self.parameters.iter().all(|p| p.geweke_pass())
    }

    pub fn psrf_all_pass(&self) -> bool {
        self.parameters.iter().all(|p| p.psrf_pass())
    }
}

/// Parameters monitored by default: the β block, τ and σ².
pub fn default_monitored(spec: &HlmSpec) -> Vec<String> {
    crate::gibbs::parameter_names(spec).into_iter().take(spec.n_fixed() + 2).collect()
}

/// Geweke z (first 20% vs last 50%) on the first chain and PSRF across all
/// chains, for each monitored column.
pub fn convergence_report(chains: &[ChainRecord], monitored: &[String]) -> Result<ConvergenceReport> {
    if chains.is_empty() {
        return Err(Error::arg("no chains to diagnose"));
    }
    let mut parameters = Vec::with_capacity(monitored.len());
    for name in monitored {
        let series: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.series(name).ok_or_else(|| Error::arg(format!("chain has no column {name}"))))
            .collect::<Result<_>>()?;
        let geweke = geweke_z(&series[0], 0.2, 0.5)?;
        let psrf = if chains.len() >= 2 {
            let views: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            Some(psrf(&views)?)
        } else {
            None
        };
        parameters.push(ParameterConvergence { name: name.clone(), geweke, psrf });
    }
    Ok(ConvergenceReport { parameters })
}

/// Summaries of each named column over the pooled draws of all chains.
pub fn pooled_summaries(chains: &[ChainRecord], names: &[String], level: f64) -> Result<Vec<PosteriorSummary>> {
    names
        .iter()
        .map(|name| {
            let mut pooled = Vec::new();
            for chain in chains {
                pooled.extend(chain.series(name).ok_or_else(|| Error::arg(format!("chain has no column {name}")))?);
            }
            posterior_summary(&pooled, level)
        })
        .collect()
}
