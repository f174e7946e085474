//! The three subcommands, independent of argument parsing.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crt_glmm::glmm::FitControls;
use crt_glmm::harness::{replication_rng, run_scenario, ScenarioSummary};
use crt_glmm::inference::{analyse_treatment, DdfKind};
use crt_glmm::model::{ClusteredDataset, Family, ModelSpec};
use crt_glmm::sim::{gen_dataset, resolve};
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::report::{render_figures, summary_table};
use crate::results::{read_results, write_results, ReplicationLog};
use crate::CliError;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub overrides: Overrides,
    pub log_replications: bool,
    pub dump_datasets: bool,
    /// Suppress per-scenario progress lines on stderr.
    pub quiet: bool,
}

#[derive(Debug)]
pub struct SimulateOutput {
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub summaries: Vec<ScenarioSummary>,
}

/// Runs every grid cell and writes `results.csv` and `manifest.toml` into
/// the output directory. Replication failures are counted, never fatal.
pub fn simulate(config_path: &Path, opts: &SimulateOptions) -> Result<SimulateOutput, CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply(&opts.overrides)?;
    simulate_config(&cfg, opts)
}

pub fn simulate_config(cfg: &RunConfig, opts: &SimulateOptions) -> Result<SimulateOutput, CliError> {
    let scenarios = cfg.scenarios()?;
    let out = PathBuf::from(&cfg.output_dir);
    create_dir(&out)?;
    let controls = FitControls::default();
    let mut log = if opts.log_replications {
        Some(ReplicationLog::new(create_file(&out.join("replications.csv"))?))
    } else {
        None
    };
    let mut dumped: HashSet<String> = HashSet::new();
    let mut summaries = Vec::with_capacity(scenarios.len());
    for (i, sc) in scenarios.iter().enumerate() {
        let (summary, outcomes) = run_scenario(sc, cfg.n_reps, cfg.master_seed, cfg.parallelism, cfg.alpha, &controls)
            .map_err(|e| CliError::runtime(format!("scenario {}: {e}", sc.id())))?;
        if !opts.quiet {
            eprintln!(
                "[{}/{}] {}: {} failures, {} with warnings",
                i + 1,
                scenarios.len(),
                sc.id(),
                summary.failure_count,
                summary.warning_count
            );
        }
        if let Some(log) = log.as_mut() {
            log.append(sc.fitted_model, &outcomes)?;
        }
        if opts.dump_datasets && dumped.insert(sc.data_key()) {
            dump_datasets(&out, sc, cfg)?;
        }
        summaries.push(summary);
    }
    if let Some(log) = log {
        log.finish()?;
    }
    let results = out.join("results.csv");
    write_results(create_file(&results)?, &summaries)?;
    let manifest = out.join("manifest.toml");
    fs::write(&manifest, cfg.manifest(scenarios.len())).map_err(CliError::runtime)?;
    Ok(SimulateOutput { results, manifest, summaries })
}

/// Regenerates each replication's dataset from its stream; fitted models
/// that share a data-generating key share these files.
fn dump_datasets(out: &Path, sc: &crt_glmm::sim::Scenario, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = out.join("datasets").join(sc.data_key());
    create_dir(&dir)?;
    let resolved = resolve(sc).map_err(CliError::runtime)?;
    for rep in 0..cfg.n_reps as u64 {
        let mut rng = replication_rng(cfg.master_seed, sc, rep);
        let data = gen_dataset(sc, &resolved, &mut rng).map_err(CliError::runtime)?;
        data.write_csv(create_file(&dir.join(format!("rep{rep:05}.csv")))?)
            .map_err(CliError::runtime)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub family: Family,
    pub covariates: Vec<String>,
    pub no_intercept: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestRow {
    pub test: String,
    pub ddf_kind: String,
    pub statistic: f64,
    pub ddf: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub family: String,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub coefficients: Vec<CoefficientRow>,
    pub tau2: f64,
    pub sigma2: Option<f64>,
    pub loglik: f64,
    pub loglik_reduced: f64,
    pub converged: bool,
    pub ddfs: BTreeMap<String, Option<f64>>,
    pub tests: Vec<TestRow>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn needs_banner(&self) -> bool {
        !self.converged || !self.warnings.is_empty()
    }
}

pub fn load_dataset(path: &Path) -> Result<ClusteredDataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    ClusteredDataset::read_csv(file, &BTreeMap::new())
        .map_err(|e| CliError::input(format!("malformed dataset {}: {e}", path.display())))
}

/// Fits the model with and without treatment and runs all eight tests.
pub fn fit_dataset(data: &ClusteredDataset, opts: &FitOptions) -> Result<FitReport, CliError> {
    for c in &opts.covariates {
        if data.covariate_index(c).is_none() {
            return Err(CliError::input(format!("unknown covariate `{c}`")));
        }
    }
    let mut spec = ModelSpec::new(opts.family, opts.covariates.clone());
    spec.include_intercept = !opts.no_intercept;
    opts.family
        .validate_outcomes(&data.outcomes())
        .map_err(|e| CliError::input(e.to_string()))?;
    let a = analyse_treatment(data, &spec, &FitControls::default()).map_err(CliError::runtime)?;

    let mut warnings: Vec<String> = a.full.warnings.iter().map(|w| format!("full model: {w}")).collect();
    warnings.extend(a.reduced.warnings.iter().map(|w| format!("reduced model: {w}")));
    if !a.full.converged || !a.reduced.converged {
        warnings.push("optimizer did not converge".into());
    }
    for t in &a.tests {
        for w in &t.warnings {
            let w = format!("{} ({}): {w}", t.test, t.ddf_kind);
            warnings.push(w);
        }
    }
    Ok(FitReport {
        family: opts.family.to_string(),
        n_obs: a.design.n_obs,
        n_clusters: a.design.n_clusters,
        coefficients: a
            .design
            .column_names
            .iter()
            .enumerate()
            .map(|(j, name)| CoefficientRow { name: name.clone(), estimate: a.full.beta_hat[j], se: a.full.se[j] })
            .collect(),
        tau2: a.full.tau2_hat,
        sigma2: a.full.sigma2_hat,
        loglik: a.full.loglik,
        loglik_reduced: a.reduced.loglik,
        converged: a.full.converged && a.reduced.converged,
        ddfs: DdfKind::ALL.iter().map(|&k| (k.to_string(), a.ddfs.get(k))).collect(),
        tests: a
            .tests
            .iter()
            .map(|t| TestRow {
                test: t.test.to_string(),
                ddf_kind: t.ddf_kind.to_string(),
                statistic: t.statistic,
                ddf: t.ddf,
                p_value: t.p_value,
            })
            .collect(),
        warnings,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.prec$}"))
}

/// Fixed-width text rendering of a fit.
pub fn format_fit(r: &FitReport) -> String {
    let mut s = String::new();
    if r.needs_banner() {
        s.push_str("**********************************************************************\n");
        s.push_str("WARNING: results may be unreliable\n");
        for w in &r.warnings {
            let _ = writeln!(s, "  - {w}");
        }
        s.push_str("**********************************************************************\n\n");
    }
    let _ = writeln!(
        s,
        "Random-intercept {} model: {} observations in {} clusters",
        r.family, r.n_obs, r.n_clusters
    );
    let _ = writeln!(s, "log-likelihood {:>14.6}   (without treatment {:.6})", r.loglik, r.loglik_reduced);
    let _ = write!(s, "tau2           {:>14.6}", r.tau2);
    if let Some(s2) = r.sigma2 {
        let _ = write!(s, "   sigma2 {s2:.6}");
    }
    s.push_str("\n\n");
    let _ = writeln!(s, "{:<16} {:>12} {:>12}", "coefficient", "estimate", "std.error");
    for c in &r.coefficients {
        let _ = writeln!(s, "{:<16} {:>12.6} {:>12.6}", c.name, c.estimate, c.se);
    }
    s.push('\n');
    let _ = writeln!(s, "{:<16} {:>8}", "ddf", "value");
    for (k, v) in DdfKind::ALL.iter().map(|k| (k.to_string(), r.ddfs[&k.to_string()])) {
        let _ = writeln!(s, "{k:<16} {:>8}", opt(v, 0));
    }
    s.push('\n');
    let _ = writeln!(s, "{:<8} {:<12} {:>12} {:>8} {:>10}", "test", "ddf", "statistic", "ddf", "p-value");
    for t in &r.tests {
        let _ = writeln!(
            s,
            "{:<8} {:<12} {:>12.6} {:>8} {:>10}",
            t.test,
            t.ddf_kind,
            t.statistic,
            opt(t.ddf, 0),
            opt(t.p_value, 6)
        );
    }
    s
}

/// Writes one SVG per figure group and `summary.txt` into `out`; returns
/// the summary text.
pub fn report(results: &Path, out: &Path) -> Result<(Vec<PathBuf>, String), CliError> {
    let file = File::open(results).map_err(|e| CliError::input(format!("cannot open {}: {e}", results.display())))?;
    let rows = read_results(file)?;
    create_dir(out)?;
    let mut written = Vec::new();
    for fig in render_figures(&rows) {
        let path = out.join(&fig.file_name);
        fs::write(&path, fig.svg).map_err(CliError::runtime)?;
        written.push(path);
    }
    let summary = summary_table(&rows);
    let path = out.join("summary.txt");
    fs::write(&path, &summary).map_err(CliError::runtime)?;
    written.push(path);
    Ok((written, summary))
}
