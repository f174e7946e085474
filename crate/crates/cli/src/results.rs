//! Results CSV (one row per scenario, test and DDF) and the per-replication log.

use std::io::{Read, Write};

use crt_glmm::harness::{ReplicationOutcome, ScenarioSummary};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Columns every results CSV must carry, in output order.
pub const RESULT_COLUMNS: [&str; 22] = [
    "scenario_id",
    "design",
    "outcome",
    "k",
    "mean_size",
    "cv",
    "icc",
    "dgm",
    "fitted_model",
    "prevalence_target",
    "alpha",
    "test",
    "ddf_kind",
    "n_reps",
    "n_reject",
    "n_undefined",
    "n_failed",
    "type1_rate",
    "mc_se",
    "mean_lmm_icc",
    "mean_bias",
    "warning_count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario_id: String,
    pub design: String,
    pub outcome: String,
    pub k: usize,
    pub mean_size: f64,
    pub cv: f64,
    pub icc: f64,
    pub dgm: String,
    pub fitted_model: u8,
    pub prevalence_target: Option<f64>,
    pub alpha: f64,
    pub test: String,
    pub ddf_kind: String,
    pub n_reps: usize,
    pub n_reject: usize,
    pub n_undefined: usize,
    pub n_failed: usize,
    pub type1_rate: f64,
    pub mc_se: f64,
    pub mean_lmm_icc: f64,
    pub mean_bias: f64,
    pub warning_count: usize,
}

/// One row per (test, DDF) of `summary`.
pub fn rows_for(summary: &ScenarioSummary) -> Vec<ResultRow> {
    let s = &summary.scenario;
    summary
        .tests
        .iter()
        .map(|t| ResultRow {
            scenario_id: s.id(),
            design: s.design.to_string(),
            outcome: s.outcome.to_string(),
            k: s.k,
            mean_size: s.mean_size,
            cv: s.cv,
            icc: s.icc,
            dgm: s.dgm.to_string(),
            fitted_model: s.fitted_model,
            prevalence_target: s.prevalence_target,
            alpha: summary.alpha,
            test: t.test.to_string(),
            ddf_kind: t.ddf_kind.to_string(),
            n_reps: summary.n_reps,
            n_reject: t.n_reject,
            n_undefined: t.n_undefined,
            n_failed: t.n_failed,
            type1_rate: t.type1_rate,
            mc_se: t.mc_se,
            mean_lmm_icc: summary.mean_lmm_icc,
            mean_bias: summary.mean_bias,
            warning_count: summary.warning_count,
        })
        .collect()
}

pub fn write_results<W: Write>(writer: W, summaries: &[ScenarioSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in summaries.iter().flat_map(rows_for) {
        w.serialize(row).map_err(CliError::runtime)?;
    }
    w.flush().map_err(CliError::runtime)?;
    Ok(())
}

/// Reads a results CSV, failing with exit code 2 on missing columns or no rows.
pub fn read_results<R: Read>(reader: R) -> Result<Vec<ResultRow>, CliError> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| CliError::input(format!("unreadable results CSV: {e}")))?.clone();
    let missing: Vec<&str> = RESULT_COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::input(format!("results CSV is missing columns: {}", missing.join(", "))));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| CliError::input(format!("results CSV row {}: {e}", i + 1)))?);
    }
    if rows.is_empty() {
        return Err(CliError::input("results CSV has no rows"));
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct LogRow<'a> {
    scenario_id: &'a str,
    fitted_model: u8,
    rep_index: u64,
    test: String,
    ddf_kind: String,
    statistic: Option<f64>,
    ddf: Option<f64>,
    p_value: Option<f64>,
    beta_trt: f64,
    se_trt: f64,
    tau2_hat: f64,
    converged: bool,
    n_warnings: usize,
    failure: &'a str,
}

/// Per-replication log: one row per (replication, fitted model, test, DDF);
/// failed replications get a single row with empty test fields.
pub struct ReplicationLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> ReplicationLog<W> {
    pub fn new(inner: W) -> Self {
        Self { writer: csv::Writer::from_writer(inner) }
    }

    pub fn append(&mut self, fitted_model: u8, outcomes: &[ReplicationOutcome]) -> Result<(), CliError> {
        for o in outcomes {
            let base = |test: String, ddf_kind: String, statistic, ddf, p_value| LogRow {
                scenario_id: &o.scenario_id,
                fitted_model,
                rep_index: o.rep_index,
                test,
                ddf_kind,
                statistic,
                ddf,
                p_value,
                beta_trt: o.beta_trt,
                se_trt: o.se_trt,
                tau2_hat: o.tau2_hat,
                converged: o.converged,
                n_warnings: o.warnings.len(),
                failure: o.failure.as_deref().unwrap_or(""),
            };
            if o.tests.is_empty() {
                self.writer
                    .serialize(base(String::new(), String::new(), None, None, None))
                    .map_err(CliError::runtime)?;
            }
            for t in &o.tests {
                let row = base(t.test.to_string(), t.ddf_kind.to_string(), Some(t.statistic), t.ddf, t.p_value);
                self.writer.serialize(row).map_err(CliError::runtime)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(CliError::runtime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_columns_are_listed() {
        let err = read_results("scenario_id,test\nx,wald-t\n".as_bytes()).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("ddf_kind") && err.message.contains("type1_rate"));
    }

    #[test]
    fn header_only_is_rejected() {
        let header = RESULT_COLUMNS.join(",");
        let err = read_results(format!("{header}\n").as_bytes()).unwrap_err();
        assert!(err.message.contains("no rows"));
        assert_eq!(read_results("".as_bytes()).unwrap_err().code, 2);
    }
}
