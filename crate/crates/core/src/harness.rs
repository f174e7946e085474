//! Monte Carlo driver: replicate, fit, test and aggregate.
//!
//! Every replication draws from its own ChaCha stream, keyed by the master
//! seed, the scenario's data-generating key and the replication index, so
//! results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::glmm::{fit_lmm_gaussian, FitControls};
use crate::inference::{analyse_treatment, DdfKind, DdfSet, TestKind};
use crate::model::{build_design, ClusteredDataset, ModelSpec};
use crate::sim::{gen_dataset, resolve, ResolvedScenario, Scenario};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// All (test, DDF) pairs in reporting order.
pub fn test_grid() -> Vec<(TestKind, DdfKind)> {
    TestKind::ALL
        .into_iter()
        .flat_map(|t| DdfKind::ALL.into_iter().map(move |d| (t, d)))
        .collect()
}

/// Random stream for one replication.
pub fn replication_rng(master_seed: u64, scenario: &Scenario, rep_index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(scenario.data_key().as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(rep_index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub test: TestKind,
    pub ddf_kind: DdfKind,
    pub statistic: f64,
    pub ddf: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub scenario_id: String,
    pub rep_index: u64,
    /// Set when the replication could not produce a treatment estimate.
    pub failure: Option<String>,
    pub beta_trt: f64,
    pub se_trt: f64,
    pub tau2_hat: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// One entry per [`test_grid`] pair; empty for failed replications.
    pub tests: Vec<TestOutcome>,
    pub ddfs: Option<DdfSet>,
    pub lmm_icc: Option<f64>,
}

impl ReplicationOutcome {
    fn failed(scenario: &Scenario, rep_index: u64, msg: String, lmm_icc: Option<f64>) -> Self {
        Self {
            scenario_id: scenario.id(),
            rep_index,
            failure: Some(msg),
            beta_trt: f64::NAN,
            se_trt: f64::NAN,
            tau2_hat: f64::NAN,
            converged: false,
            warnings: Vec::new(),
            tests: Vec::new(),
            ddfs: None,
            lmm_icc,
        }
    }

    pub fn has_warnings(&self) -> bool {
        !self.converged || !self.warnings.is_empty()
    }
}

/// Simulates and analyses one replication. Hard failures are recorded in
/// the outcome rather than returned as errors.
pub fn run_replication(
    scenario: &Scenario,
    resolved: &ResolvedScenario,
    rep_index: u64,
    master_seed: u64,
    controls: &FitControls,
) -> ReplicationOutcome {
    let mut rng = replication_rng(master_seed, scenario, rep_index);
    let data = match gen_dataset(scenario, resolved, &mut rng) {
        Ok(d) => d,
        Err(e) => return ReplicationOutcome::failed(scenario, rep_index, format!("generation: {e}"), None),
    };
    analyse_dataset(scenario, &data, rep_index, controls)
}

/// Fits and tests one dataset under the scenario's fitted model.
pub fn analyse_dataset(
    scenario: &Scenario,
    data: &ClusteredDataset,
    rep_index: u64,
    controls: &FitControls,
) -> ReplicationOutcome {
    let family = scenario.outcome.family();
    let y = data.outcomes();

    let lmm_spec = ModelSpec::new(family, scenario.dgm_covariates()).without_treatment();
    let lmm_icc = build_design(data, &lmm_spec)
        .and_then(|d| fit_lmm_gaussian(&d, &y))
        .ok()
        .map(|f| f.icc.clamp(0.0, 1.0));

    let attempt = || -> Result<ReplicationOutcome> {
        let spec = ModelSpec::new(family, scenario.fitted_covariates());
        let a = analyse_treatment(data, &spec, controls)?;
        if !a.ddfs.ordering_holds() {
            return Err(Error::Numerical(format!("DDF ordering violated: {:?}", a.ddfs)));
        }
        let mut warnings: Vec<String> = a.full.warnings.iter().map(|w| format!("full: {w}")).collect();
        warnings.extend(a.reduced.warnings.iter().map(|w| format!("reduced: {w}")));
        let mut tests = Vec::with_capacity(a.tests.len());
        for r in &a.tests {
            for w in &r.warnings {
                if !warnings.contains(w) {
                    warnings.push(w.clone());
                }
            }
            tests.push(TestOutcome {
                test: r.test,
                ddf_kind: r.ddf_kind,
                statistic: r.statistic,
                ddf: r.ddf,
                p_value: r.p_value,
            });
        }
        let trt = a.treatment_index;
        Ok(ReplicationOutcome {
            scenario_id: scenario.id(),
            rep_index,
            failure: None,
            beta_trt: a.full.beta_hat[trt],
            se_trt: a.full.se[trt],
            tau2_hat: a.full.tau2_hat,
            converged: a.full.converged && a.reduced.converged,
            warnings,
            tests,
            ddfs: Some(a.ddfs),
            lmm_icc,
        })
    };
    attempt().unwrap_or_else(|e| ReplicationOutcome::failed(scenario, rep_index, format!("fit: {e}"), lmm_icc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSummary {
    pub test: TestKind,
    pub ddf_kind: DdfKind,
    pub n_reject: usize,
    pub n_undefined: usize,
    pub n_failed: usize,
    /// `n_reject / (n_reps - n_undefined - n_failed)`; NaN when that is 0.
    pub type1_rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub n_reps: usize,
    pub alpha: f64,
    pub tests: Vec<TestSummary>,
    pub mean_lmm_icc: f64,
    /// Mean treatment estimate; the true effect is 0.
    pub mean_bias: f64,
    /// Standard deviation of the treatment estimates.
    pub sd_beta_trt: f64,
    /// Replications with a non-converged fit or any warning.
    pub warning_count: usize,
    pub failure_count: usize,
}

impl ScenarioSummary {
    pub fn get(&self, test: TestKind, ddf_kind: DdfKind) -> &TestSummary {
        self.tests
            .iter()
            .find(|t| t.test == test && t.ddf_kind == ddf_kind)
            .expect("every test pair is summarized")
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

/// Aggregates replications in index order at significance level `alpha`.
pub fn summarize(scenario: &Scenario, outcomes: &[ReplicationOutcome], alpha: f64) -> ScenarioSummary {
    let n_reps = outcomes.len();
    let failure_count = outcomes.iter().filter(|o| o.failure.is_some()).count();
    let tests = test_grid()
        .into_iter()
        .enumerate()
        .map(|(slot, (test, ddf_kind))| {
            let mut n_reject = 0;
            let mut n_undefined = 0;
            for o in outcomes.iter().filter(|o| o.failure.is_none()) {
                match o.tests[slot].p_value {
                    Some(p) if p < alpha => n_reject += 1,
                    Some(_) => {}
                    None => n_undefined += 1,
                }
            }
            let n_eff = n_reps - n_undefined - failure_count;
            let (type1_rate, mc_se) = if n_eff == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let p = n_reject as f64 / n_eff as f64;
                (p, (p * (1.0 - p) / n_eff as f64).sqrt())
            };
            TestSummary { test, ddf_kind, n_reject, n_undefined, n_failed: failure_count, type1_rate, mc_se }
        })
        .collect();
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter(|o| o.failure.is_none()).collect();
    let mean_bias = mean(ok.iter().map(|o| o.beta_trt));
    let sd_beta_trt = if ok.len() > 1 {
        (ok.iter().map(|o| (o.beta_trt - mean_bias).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    ScenarioSummary {
        scenario: scenario.clone(),
        n_reps,
        alpha,
        tests,
        mean_lmm_icc: mean(outcomes.iter().filter_map(|o| o.lmm_icc)),
        mean_bias,
        sd_beta_trt,
        warning_count: ok.iter().filter(|o| o.has_warnings()).count(),
        failure_count,
    }
}

/// Runs `n_reps` replications on `threads` worker threads (0 = all cores)
/// and returns the summary together with the per-replication outcomes.
pub fn run_scenario(
    scenario: &Scenario,
    n_reps: usize,
    master_seed: u64,
    threads: usize,
    alpha: f64,
    controls: &FitControls,
) -> Result<(ScenarioSummary, Vec<ReplicationOutcome>)> {
    if n_reps == 0 {
        return Err(Error::Validation("n_reps must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let resolved = resolve(scenario)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        (0..n_reps as u64)
            .into_par_iter()
            .map(|r| run_replication(scenario, &resolved, r, master_seed, controls))
            .collect()
    });
    Ok((summarize(scenario, &outcomes, alpha), outcomes))
}
