//! Trial simulator.

pub mod generator;
pub mod scenario;

pub use generator::{
    assign_treatment, binary_marginal_prevalence, count_marginal_mean, draw_random_intercepts, gen_cluster_sizes, gen_dataset,
    icc_from_tau2, resolve, solve_intercept_for_prevalence, solve_tau2, ResolvedScenario,
};
pub use scenario::{CovariateDist, CovariateSpec, Design, Dgm, Outcome, Scenario, Term, SENSITIVITY_PREVALENCE};
