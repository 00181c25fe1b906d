use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Trim, WriterBuilder};

use super::data::{load_dataset, ColumnSchema, LoadedData};
use super::kv::KeyValues;
use crate::diagnostics::{
    convergence_report, default_monitored, geweke_z, pooled_summaries, posterior_summary, psrf, ConvergenceReport,
    GewekeResult, PosteriorSummary, PsrfResult, PSRF_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::gibbs::{run_chains, ChainRecord, GibbsConfig, GibbsModel, PriorConfig};
use crate::model::{complete_case_covariance, HlmSpec};
use crate::sim::{run_replications, MissingnessLaw, ReplicationReport, Scenario, SimulationDesign};

/// Digits after the decimal point in report tables.
pub const REPORT_DIGITS: usize = 6;

/// Fixed-precision cell; NaN prints as `NA` and negative zero as zero.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    let s = format!("{v:.REPORT_DIGITS$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Command-line overrides of configured chain settings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub burn_in: Option<usize>,
    pub kept: Option<usize>,
    pub workers: Option<usize>,
}

impl RunOptions {
    pub fn apply(&self, config: &mut GibbsConfig) {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(c) = self.chains {
            config.n_chains = c;
        }
        if let Some(b) = self.burn_in {
            config.burn_in = b;
        }
        if let Some(k) = self.kept {
            config.kept = k;
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(dir.display().to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// Analysis model and prior settings from a key-value file.
///
/// `interactions` lists `a:b` pairs of column names; a pair of two partial
/// covariates is a C-by-C term, a partial covariate with a known covariate
/// is an X-by-C term. `interactions = all` activates every C-by-C pair and
/// `none` (or an absent key) activates nothing. Optional `ig_shape`,
/// `ig_scale` and `iw_dof` override the prior defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: HlmSpec,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
    pub iw_dof: Option<f64>,
}

impl ModelFile {
    pub fn from_kv(kv: &KeyValues, schema: &ColumnSchema) -> Result<Self> {
        kv.check_known(&["interactions", "ig_shape", "ig_scale", "iw_dof"])?;
        let p = schema.partial.len();
        let x_names = schema.x_names();
        let q1 = schema.level1.len();
        let q2 = schema.level2.len();
        let terms = kv.list("interactions");
        let spec = if terms == ["all"] {
            HlmSpec::with_all_cc(p, q1, q2)?
        } else {
            let mut xc = Vec::new();
            let mut cc = Vec::new();
            for term in terms.iter().filter(|t| t.as_str() != "none") {
                let (a, b) = term
                    .split_once(':')
                    .map(|(a, b)| (a.trim(), b.trim()))
                    .ok_or_else(|| Error::Config(format!("interaction '{term}' must look like a:b")))?;
                let c_idx = |n: &str| schema.partial.iter().position(|c| c == n);
                let x_idx = |n: &str| x_names.iter().position(|c| c == n);
                match (c_idx(a), c_idx(b), x_idx(a), x_idx(b)) {
                    (Some(s), Some(t), _, _) if s != t => cc.push((s.min(t), s.max(t))),
                    (Some(s), _, _, Some(x)) | (_, Some(s), Some(x), _) => xc.push((s, x)),
                    _ => {
                        return Err(Error::Config(format!(
                            "interaction '{term}' must pair a partial covariate with another partial or known covariate"
                        )))
                    }
                }
            }
            HlmSpec::new(p, q1, q2, xc, cc)?
        };
        Ok(Self {
            spec,
            ig_shape: kv.parse_value("ig_shape")?,
            ig_scale: kv.parse_value("ig_scale")?,
            iw_dof: kv.parse_value("iw_dof")?,
        })
    }

    pub fn default_for(schema: &ColumnSchema) -> Result<Self> {
        Self::from_kv(&KeyValues::default(), schema)
    }

    pub fn priors(&self, loaded: &LoadedData) -> Result<PriorConfig> {
        let mut priors = PriorConfig::with_scale(complete_case_covariance(&loaded.dataset)?)?;
        if let Some(v) = self.ig_shape {
            priors.ig_shape = v;
        }
        if let Some(v) = self.ig_scale {
            priors.ig_scale = v;
        }
        if let Some(v) = self.iw_dof {
            priors.iw_dof = v;
        }
        priors.validate(self.spec.p())?;
        Ok(priors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub parameter: String,
    pub term: String,
    pub summary: PosteriorSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub n_clusters: usize,
    pub n_units: usize,
    pub missing_y: usize,
    pub missing_c: usize,
    pub config: GibbsConfig,
    pub centers: Vec<(String, f64)>,
    pub estimates: Vec<EstimateRow>,
    pub convergence: ConvergenceReport,
    /// `τ̂ / (τ̂ + σ̂²)` from posterior means.
    pub icc: f64,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn estimate(&self, parameter: &str) -> Option<&PosteriorSummary> {
        self.estimates.iter().find(|r| r.parameter == parameter).map(|r| &r.summary)
    }
}

/// Runs the sampler on `loaded` and summarises β, τ and σ².
pub fn fit_loaded(loaded: &LoadedData, model: &ModelFile, config: &GibbsConfig) -> Result<(FitReport, Vec<ChainRecord>)> {
    let priors = model.priors(loaded)?;
    let gibbs = GibbsModel::new(&model.spec, &loaded.dataset, &priors)?;
    let chains = run_chains(&gibbs, config)?;
    let names = default_monitored(&model.spec);
    let mut terms = model.spec.term_labels(&loaded.schema.partial, &loaded.schema.x_names())?;
    terms.push("between-cluster variance".into());
    terms.push("within-cluster variance".into());
    let summaries = pooled_summaries(&chains, &names, 0.95)?;
    let convergence = convergence_report(&chains, &names)?;
    let mut warnings = Vec::new();
    if chains.len() < 2 {
        warnings.push("PSRF needs at least two chains; convergence was not assessed".to_string());
    } else {
        let bad: Vec<String> = convergence
            .parameters
            .iter()
            .filter(|c| !c.psrf_pass())
            .map(|c| format!("{} (PSRF {})", c.name, c.psrf.map_or("NA".into(), |r| fmt_num(r.value))))
            .collect();
        if !bad.is_empty() {
            warnings.push(format!("PSRF >= {PSRF_THRESHOLD} for {}; consider longer chains", bad.join(", ")));
        }
    }
    let tau = summaries[names.len() - 2].mean;
    let sigma2 = summaries[names.len() - 1].mean;
    let estimates = names
        .into_iter()
        .zip(terms)
        .zip(summaries)
        .map(|((parameter, term), summary)| EstimateRow { parameter, term, summary })
        .collect();
    let d = &loaded.dataset;
    let report = FitReport {
        n_clusters: d.n_clusters(),
        n_units: d.n_units(),
        missing_y: d.n_missing_y(),
        missing_c: d.n_missing_c(),
        config: config.clone(),
        centers: loaded.centers.clone(),
        estimates,
        convergence,
        icc: tau / (tau + sigma2),
        warnings,
    };
    Ok((report, chains))
}

/// Loads inputs, fits, and writes `estimates.csv`, `convergence.csv`,
/// `summary.txt` and one `trace_chain{k}.csv` per chain into `out_dir`.
pub fn fit(data: &Path, schema: &Path, model: Option<&Path>, config: &GibbsConfig, out_dir: &Path) -> Result<FitReport> {
    let schema = ColumnSchema::from_path(schema)?;
    let loaded = load_dataset(data, &schema)?;
    let model = match model {
        Some(path) => ModelFile::from_kv(&KeyValues::from_path(path)?, &schema).map_err(|e| e.context(path.display().to_string()))?,
        None => ModelFile::default_for(&schema)?,
    };
    let (report, chains) = fit_loaded(&loaded, &model, config).map_err(|e| e.context("fit"))?;
    write_fit(out_dir, &report, &chains)?;
    Ok(report)
}

pub fn write_fit(out_dir: &Path, report: &FitReport, chains: &[ChainRecord]) -> Result<()> {
    create_dir(out_dir)?;
    let mut est = String::from("parameter,term,estimate,se,ci_2.5,ci_97.5,significant\n");
    for r in &report.estimates {
        let s = &r.summary;
        let _ = writeln!(
            est,
            "{},{},{},{},{},{},{}",
            r.parameter,
            r.term,
            fmt_num(s.mean),
            fmt_num(s.sd),
            fmt_num(s.lower),
            fmt_num(s.upper),
            if s.significant() { "*" } else { "" }
        );
    }
    write_text(&out_dir.join("estimates.csv"), &est)?;
    write_text(&out_dir.join("convergence.csv"), &convergence_csv(&report.convergence))?;

    let mut txt = String::new();
    let _ = writeln!(txt, "clusters: {}", report.n_clusters);
    let _ = writeln!(txt, "units: {}", report.n_units);
    let _ = writeln!(txt, "missing outcomes: {}", report.missing_y);
    let _ = writeln!(txt, "missing cluster covariates: {}", report.missing_c);
    let c = &report.config;
    let _ = writeln!(txt, "chains: {}  burn-in: {}  kept: {}  seed: {}", c.n_chains, c.burn_in, c.kept, c.seed);
    for (name, center) in &report.centers {
        let _ = writeln!(txt, "centered {name} at {}", fmt_num(*center));
    }
    let _ = writeln!(txt);
    let _ = writeln!(txt, "{:<28} {:>12} {:>12} {:>12} {:>12}", "term", "estimate", "se", "2.5%", "97.5%");
    for r in &report.estimates {
        let s = &r.summary;
        let _ = writeln!(
            txt,
            "{:<28} {:>12} {:>12} {:>12} {:>12}{}",
            r.term,
            fmt_num(s.mean),
            fmt_num(s.sd),
            fmt_num(s.lower),
            fmt_num(s.upper),
            if s.significant() { " *" } else { "" }
        );
    }
    let _ = writeln!(txt);
    let _ = writeln!(txt, "intraclass correlation: {}", fmt_num(report.icc));
    if report.warnings.is_empty() {
        let _ = writeln!(txt, "convergence: all PSRF < {PSRF_THRESHOLD}");
    }
    for w in &report.warnings {
        let _ = writeln!(txt, "warning: {w}");
    }
    write_text(&out_dir.join("summary.txt"), &txt)?;

    for (k, chain) in chains.iter().enumerate() {
        write_trace(&out_dir.join(format!("trace_chain{}.csv", k + 1)), &chain.columns, &chain.draws)?;
    }
    Ok(())
}

fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("parameter,psrf,psrf_pass,geweke_z,geweke_pass\n");
    for c in &report.parameters {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.name,
            c.psrf.map_or("NA".into(), |r| fmt_num(r.value)),
            c.psrf.map_or("NA", |r| if r.pass() { "yes" } else { "no" }),
            fmt_num(c.geweke.z),
            if c.geweke_pass() { "yes" } else { "no" }
        );
    }
    out
}

/// Trace file: header of column names, one row per kept iteration. Values
/// use the shortest representation that reads back exactly.
pub fn write_trace(path: &Path, columns: &[String], draws: &[f64]) -> Result<()> {
    let mut w = WriterBuilder::new().from_path(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    w.write_record(columns)?;
    for row in draws.chunks(columns.len()) {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Columns and row-major draws of a trace file.
pub fn read_trace(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let ctx = |e: Error| e.context(path.display().to_string());
    let mut r = ReaderBuilder::new().trim(Trim::All).from_path(path).map_err(|e| ctx(e.into()))?;
    let columns: Vec<String> = r.headers().map_err(|e| ctx(e.into()))?.iter().map(String::from).collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(ctx(Error::Data("trace file has no header".into())));
    }
    let mut draws = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| ctx(e.into()))?;
        for cell in rec.iter() {
            draws.push(cell.parse::<f64>().map_err(|_| ctx(Error::Data(format!("cannot parse '{cell}' as a number"))))?);
        }
    }
    if draws.is_empty() {
        return Err(ctx(Error::Data("trace file has no draws".into())));
    }
    Ok((columns, draws))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceDiagnostic {
    pub name: String,
    pub summary: PosteriorSummary,
    pub geweke: GewekeResult,
    pub psrf: Option<PsrfResult>,
}

/// Recomputes summaries, Geweke z (first file) and PSRF (all files) for every
/// column of saved trace files and writes `diagnostics.csv` into `out_dir`.
pub fn diagnose(traces: &[PathBuf], out_dir: &Path) -> Result<Vec<TraceDiagnostic>> {
    if traces.is_empty() {
        return Err(Error::Config("no trace files given".into()));
    }
    let loaded: Vec<(Vec<String>, Vec<f64>)> = traces.iter().map(|p| read_trace(p)).collect::<Result<_>>()?;
    let columns = loaded[0].0.clone();
    for (path, (cols, _)) in traces.iter().zip(&loaded).skip(1) {
        if *cols != columns {
            return Err(Error::Data(format!("{}: columns differ from {}", path.display(), traces[0].display())));
        }
    }
    let w = columns.len();
    let mut out = Vec::with_capacity(w);
    for (idx, name) in columns.iter().enumerate() {
        let series: Vec<Vec<f64>> = loaded.iter().map(|(_, d)| d.iter().skip(idx).step_by(w).copied().collect()).collect();
        let pooled: Vec<f64> = series.iter().flatten().copied().collect();
        let views: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        out.push(TraceDiagnostic {
            name: name.clone(),
            summary: posterior_summary(&pooled, 0.95)?,
            geweke: geweke_z(&series[0], 0.2, 0.5)?,
            psrf: if series.len() >= 2 { Some(psrf(&views)?) } else { None },
        });
    }
    create_dir(out_dir)?;
    let mut csv = String::from("parameter,mean,sd,ci_2.5,ci_97.5,psrf,psrf_pass,geweke_z,geweke_pass\n");
    for d in &out {
        let s = &d.summary;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            d.name,
            fmt_num(s.mean),
            fmt_num(s.sd),
            fmt_num(s.lower),
            fmt_num(s.upper),
            d.psrf.map_or("NA".into(), |r| fmt_num(r.value)),
            d.psrf.map_or("NA", |r| if r.pass() { "yes" } else { "no" }),
            fmt_num(d.geweke.z),
            if d.geweke.pass() { "yes" } else { "no" }
        );
    }
    write_text(&out_dir.join("diagnostics.csv"), &csv)?;
    Ok(out)
}

/// Replication study settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub design: SimulationDesign,
    pub replications: usize,
    pub gibbs: GibbsConfig,
    pub workers: usize,
}

const SIM_KEYS: &[&str] = &[
    "scenario",
    "clusters",
    "cluster_size",
    "replications",
    "burn_in",
    "kept",
    "chains",
    "seed",
    "workers",
    "beta",
    "tau",
    "sigma2",
    "x_mean",
    "x_variance",
    "mask_y",
    "mask_c1",
    "mask_c2",
];

fn override_law(law: &mut MissingnessLaw, values: &[f64], key: &str) -> Result<()> {
    match (law, values) {
        (MissingnessLaw::Mar { c0, c1, delta }, [a, b, d]) => {
            (*c0, *c1, *delta) = (*a, *b, *d);
            Ok(())
        }
        (MissingnessLaw::Mnar { d0, d1 }, [a, b]) => {
            (*d0, *d1) = (*a, *b);
            Ok(())
        }
        (MissingnessLaw::Mar { .. }, _) => Err(Error::Config(format!("{key}: MAR law needs c0, c1, delta"))),
        (MissingnessLaw::Mnar { .. }, _) => Err(Error::Config(format!("{key}: MNAR law needs d0, d1"))),
    }
}

impl SimulationConfig {
    /// Required keys: `scenario`, `clusters`. Everything else defaults to
    /// the scenario's constants; `mask_y`, `mask_c1`, `mask_c2` replace the
    /// coefficients of the corresponding law.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(SIM_KEYS)?;
        let scenario: Scenario = kv.require("scenario")?.parse()?;
        let clusters: usize = kv.parse_value("clusters")?.ok_or_else(|| Error::Config("missing required key 'clusters'".into()))?;
        let mut design = SimulationDesign::new(scenario, clusters);
        if let Some(n) = kv.parse_value("cluster_size")? {
            design.cluster_size = n;
        }
        if let Some(b) = kv.numbers("beta")? {
            design.beta = b;
        }
        for (key, slot) in [("tau", &mut design.tau), ("sigma2", &mut design.sigma2), ("x_mean", &mut design.x_mean), ("x_variance", &mut design.x_variance)] {
            if let Some(v) = kv.numbers(key)? {
                match v.as_slice() {
                    [x] => *slot = *x,
                    _ => return Err(Error::Config(format!("{key} takes one number"))),
                }
            }
        }
        for (idx, key) in ["mask_y", "mask_c1", "mask_c2"].into_iter().enumerate() {
            if let Some(v) = kv.numbers(key)? {
                override_law(&mut design.masks[idx].law, &v, key)?;
            }
        }
        design.validate()?;
        let mut gibbs = GibbsConfig::default();
        RunOptions {
            seed: kv.parse_value("seed")?,
            chains: kv.parse_value("chains")?,
            burn_in: kv.parse_value("burn_in")?,
            kept: kv.parse_value("kept")?,
            workers: None,
        }
        .apply(&mut gibbs);
        gibbs.validate()?;
        Ok(Self {
            design,
            replications: kv.parse_value("replications")?.unwrap_or(100),
            gibbs,
            workers: kv.parse_value("workers")?.unwrap_or(1),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::from_path(path)?).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn apply(&mut self, opts: &RunOptions) {
        opts.apply(&mut self.gibbs);
        if let Some(w) = opts.workers {
            self.workers = w;
        }
    }
}

/// Runs the study and writes `simulation.csv` (aggregate table),
/// `replications.csv` (one line per replication) and `simulation.txt`.
pub fn simulate(config: &SimulationConfig, out_dir: &Path) -> Result<ReplicationReport> {
    let report = run_replications(&config.design, config.replications, &config.gibbs, config.workers)?;
    write_simulation(out_dir, config, &report)?;
    Ok(report)
}

pub fn write_simulation(out_dir: &Path, config: &SimulationConfig, report: &ReplicationReport) -> Result<()> {
    create_dir(out_dir)?;
    let mut table = String::from("parameter,truth,estimate,pct_bias,ase,ese,coverage\n");
    for r in &report.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            r.name,
            fmt_num(r.truth),
            fmt_num(r.mean_estimate),
            fmt_num(r.pct_bias),
            fmt_num(r.ase),
            fmt_num(r.ese),
            fmt_num(r.coverage)
        );
    }
    write_text(&out_dir.join("simulation.csv"), &table)?;

    let (names, _) = config.design.truth();
    let mut log = String::from("replication,status,geweke_pass,psrf_pass,missing_y");
    for k in 0..config.design.spec().p() {
        let _ = write!(log, ",missing_c{}", k + 1);
    }
    for n in &names {
        let _ = write!(log, ",{n}_mean,{n}_sd,{n}_lower,{n}_upper");
    }
    log.push('\n');
    let mut lines: Vec<(usize, String)> = Vec::new();
    for o in &report.outcomes {
        let mut line = format!(
            "{},ok,{},{},{}",
            o.index,
            if o.geweke_pass { "yes" } else { "no" },
            o.psrf_pass.map_or("NA", |b| if b { "yes" } else { "no" }),
            fmt_num(o.missing_y)
        );
        for m in &o.missing_c {
            let _ = write!(line, ",{}", fmt_num(*m));
        }
        for s in &o.summaries {
            let _ = write!(line, ",{},{},{},{}", fmt_num(s.mean), fmt_num(s.sd), fmt_num(s.lower), fmt_num(s.upper));
        }
        lines.push((o.index, line));
    }
    for (idx, msg) in &report.failures {
        lines.push((*idx, format!("{idx},\"failed: {}\"", msg.replace('"', "'"))));
    }
    lines.sort_by_key(|(i, _)| *i);
    for (_, l) in lines {
        log.push_str(&l);
        log.push('\n');
    }
    write_text(&out_dir.join("replications.csv"), &log)?;

    let mut txt = String::new();
    let d = &config.design;
    let g = &config.gibbs;
    let _ = writeln!(txt, "scenario: {}", d.scenario);
    let _ = writeln!(txt, "clusters: {}  cluster size: {}", d.clusters, d.cluster_size);
    let _ = writeln!(txt, "replications: {} requested, {} succeeded, {} failed", report.requested, report.successes(), report.failures.len());
    let _ = writeln!(txt, "chains: {}  burn-in: {}  kept: {}  seed: {}", g.n_chains, g.burn_in, g.kept, g.seed);
    let _ = writeln!(txt, "Geweke all-parameter pass rate (chain 1): {}", fmt_num(report.geweke_pass_rate));
    let _ = writeln!(txt, "PSRF all-parameter pass rate: {}", report.psrf_pass_rate.map_or("NA".into(), fmt_num));
    if report.ese_degenerate {
        let _ = writeln!(txt, "note: ESE is undefined with fewer than two successful replications and is reported as 0");
    }
    write_text(&out_dir.join("simulation.txt"), &txt)?;
    Ok(())
}
