//! Wald t and likelihood-ratio F tests for a single coefficient.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::glmm::GlmmFit;

use super::ddf::DdfKind;
use super::distributions::{tail_probability, two_sided_t_pvalue, Reference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestKind {
    WaldT,
    LrtF,
}

impl TestKind {
    pub const ALL: [TestKind; 2] = [TestKind::WaldT, TestKind::LrtF];

    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::WaldT => "wald-t",
            TestKind::LrtF => "lrt-f",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown test `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub test: TestKind,
    pub ddf_kind: DdfKind,
    pub statistic: f64,
    pub ddf: Option<f64>,
    /// `None` when the test is undefined.
    pub p_value: Option<f64>,
    pub warnings: Vec<String>,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> Option<bool> {
        self.p_value.map(|p| p < alpha)
    }
}

/// Below this Λ is treated as optimizer failure.
pub const LRT_FAILURE_TOL: f64 = 1e-6;
/// Negative Λ down to this value is rounding noise and silently clipped.
pub const LRT_NOISE_TOL: f64 = 1e-8;

/// `t = β̂_j / se_j` against `t_ν`, two-sided.
pub fn wald_t_test(fit: &GlmmFit, coef_index: usize, ddf_kind: DdfKind, ddf: Option<f64>) -> Result<TestResult> {
    let (Some(&est), Some(&se)) = (fit.beta_hat.get(coef_index), fit.se.get(coef_index)) else {
        return Err(Error::Dimension(format!("coefficient {coef_index} out of range")));
    };
    Ok(wald_t_from_estimate(est, se, ddf_kind, ddf))
}

/// Wald t test from an estimate and its standard error.
pub fn wald_t_from_estimate(estimate: f64, se: f64, ddf_kind: DdfKind, ddf: Option<f64>) -> TestResult {
    let mut warnings = Vec::new();
    let statistic = if estimate == 0.0 && se.is_finite() && se >= 0.0 {
        0.0
    } else {
        estimate / se
    };
    let valid = se.is_finite() && se > 0.0 && estimate.is_finite();
    if !valid {
        warnings.push(format!("standard error {se} is not usable; test undefined"));
    }
    let p_value = match (ddf, valid) {
        (Some(nu), true) => two_sided_t_pvalue(statistic, nu).ok(),
        _ => None,
    };
    TestResult {
        test: TestKind::WaldT,
        ddf_kind,
        statistic,
        ddf,
        p_value,
        warnings,
    }
}

/// `F = 2(ℓ_full - ℓ_reduced)` against `F(1, ν)`.
pub fn lrt_f_test(loglik_full: f64, loglik_reduced: f64, ddf_kind: DdfKind, ddf: Option<f64>) -> TestResult {
    let mut warnings = Vec::new();
    let lambda = 2.0 * (loglik_full - loglik_reduced);
    let mut defined = lambda.is_finite();
    let statistic = if !defined {
        warnings.push("likelihood ratio is not finite".into());
        f64::NAN
    } else if lambda >= 0.0 {
        lambda
    } else if lambda >= -LRT_NOISE_TOL {
        0.0
    } else if lambda >= -LRT_FAILURE_TOL {
        warnings.push(format!("negative likelihood ratio {lambda:.3e} clipped to 0"));
        0.0
    } else {
        warnings.push(format!("likelihood ratio {lambda:.3e} is negative: reduced fit beats full fit"));
        defined = false;
        lambda
    };
    let p_value = match (ddf, defined) {
        (Some(nu), true) => tail_probability(Reference::F { df1: 1.0, df2: nu }, statistic).ok(),
        _ => None,
    };
    TestResult {
        test: TestKind::LrtF,
        ddf_kind,
        statistic,
        ddf,
        p_value,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_estimate_gives_p_one() {
        let r = wald_t_from_estimate(0.0, 0.4, DdfKind::Bw2, Some(8.0));
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn t_two_on_eight_df() {
        // 2 P(T_8 > 2) via the incomplete beta: I_{8/12}(4, 1/2)
        let r = wald_t_from_estimate(1.0, 0.5, DdfKind::Bw1, Some(8.0));
        assert!((r.p_value.unwrap() - 0.080_516_238_3).abs() < 1e-9);
    }

    #[test]
    fn undefined_ddf_or_se() {
        assert!(wald_t_from_estimate(1.0, 0.5, DdfKind::Bw1, None).p_value.is_none());
        let r = wald_t_from_estimate(1.0, 0.0, DdfKind::Bw1, Some(5.0));
        assert!(r.p_value.is_none() && !r.warnings.is_empty());
        assert!(lrt_f_test(-10.0, -11.0, DdfKind::Bw1, None).p_value.is_none());
    }

    #[test]
    fn lrt_clipping_bands() {
        let r = lrt_f_test(-100.0, -100.0, DdfKind::Residual, Some(10.0));
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, Some(1.0));
        let r = lrt_f_test(-100.0 - 2e-9, -100.0, DdfKind::Residual, Some(10.0));
        assert_eq!(r.statistic, 0.0);
        assert!(r.warnings.is_empty());
        let r = lrt_f_test(-100.0 - 2e-7, -100.0, DdfKind::Residual, Some(10.0));
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.warnings.len(), 1);
        let r = lrt_f_test(-100.0 - 1e-3, -100.0, DdfKind::Residual, Some(10.0));
        assert!(r.p_value.is_none());
    }

    #[test]
    fn lrt_large_ddf_is_the_chi_square_limit() {
        let r = lrt_f_test(0.0, -3.8415 / 2.0, DdfKind::Residual, Some(1e6));
        assert!((r.p_value.unwrap() - 0.05).abs() < 1e-4);
    }

    #[test]
    fn names_round_trip() {
        for k in TestKind::ALL {
            assert_eq!(k.as_str().parse::<TestKind>().unwrap(), k);
        }
    }
}
