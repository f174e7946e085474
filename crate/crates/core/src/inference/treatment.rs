//! The eight tests of the treatment coefficient on one dataset.

use crate::error::{Error, Result};
use crate::glmm::{fit_glmm, FitControls, GlmmFit};
use crate::model::{build_design, ClusteredDataset, DesignMatrices, ModelSpec};

use super::ddf::{compute_ddfs, DdfKind, DdfSet};
use super::hypothesis::{lrt_f_test, wald_t_test, TestKind, TestResult};

/// Full and treatment-free fits with every (test, DDF) result.
#[derive(Debug, Clone)]
pub struct TreatmentAnalysis {
    pub design: DesignMatrices,
    pub treatment_index: usize,
    pub full: GlmmFit,
    pub reduced: GlmmFit,
    pub ddfs: DdfSet,
    /// Wald then LRT, each over the DDF kinds in [`DdfKind::ALL`] order.
    pub tests: Vec<TestResult>,
}

impl TreatmentAnalysis {
    pub fn get(&self, test: TestKind, kind: DdfKind) -> &TestResult {
        self.tests
            .iter()
            .find(|r| r.test == test && r.ddf_kind == kind)
            .expect("all pairs are tested")
    }
}

/// Fits `spec` with and without treatment and runs both tests against all
/// four DDFs. Errors when the treatment column is missing or aliased.
pub fn analyse_treatment(data: &ClusteredDataset, spec: &ModelSpec, controls: &FitControls) -> Result<TreatmentAnalysis> {
    let y = data.outcomes();
    let design = build_design(data, spec)?;
    let trt = design
        .treatment_index
        .ok_or_else(|| Error::Validation("design has no treatment column".into()))?;
    let full = fit_glmm(&design, &y, spec.family, controls)?;
    if !full.beta_hat[trt].is_finite() {
        return Err(Error::Numerical("treatment coefficient is aliased".into()));
    }
    let reduced = fit_glmm(&design.drop_column(trt), &y, spec.family, controls)?;
    let ddfs = compute_ddfs(&design, trt)?;
    let mut tests = Vec::with_capacity(2 * DdfKind::ALL.len());
    for test in TestKind::ALL {
        for kind in DdfKind::ALL {
            tests.push(match test {
                TestKind::WaldT => wald_t_test(&full, trt, kind, ddfs.get(kind))?,
                TestKind::LrtF => lrt_f_test(full.loglik, reduced.loglik, kind, ddfs.get(kind)),
            });
        }
    }
    Ok(TreatmentAnalysis { design, treatment_index: trt, full, reduced, ddfs, tests })
}
