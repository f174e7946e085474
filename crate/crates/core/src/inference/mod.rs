//! Denominator degrees of freedom, reference distributions and tests.

pub mod ddf;
pub mod distributions;
pub mod hypothesis;
pub mod treatment;

pub use ddf::{compute_ddfs, DdfKind, DdfSet};
pub use distributions::{tail_probability, two_sided_t_pvalue, Reference};
pub use hypothesis::{lrt_f_test, wald_t_from_estimate, wald_t_test, TestKind, TestResult};
pub use treatment::{analyse_treatment, TreatmentAnalysis};
