//! Dataset generation: variance components, cluster sizes, randomization
//! and outcomes.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::error::{Error, Result};
use crate::glmm::gauss_hermite;
use crate::model::{ClusteredDataset, CovariateLevel, Row};

use super::scenario::{CovariateDist, Outcome, Scenario, Term};

const TAU2_UPPER: f64 = 50.0;
const TAU2_TOL: f64 = 1e-10;

/// `E[exp(Σ b_k X_k)]` over independent covariates.
fn covariate_mgf(terms: &[Term]) -> f64 {
    terms
        .iter()
        .map(|t| match t.dist {
            CovariateDist::Normal => (0.5 * t.coef * t.coef).exp(),
            CovariateDist::Bernoulli => 0.5 * (1.0 + t.coef.exp()),
        })
        .product()
}

/// Marginal mean of a Poisson-log outcome.
pub fn count_marginal_mean(intercept: f64, tau2: f64, terms: &[Term]) -> f64 {
    (intercept + 0.5 * tau2).exp() * covariate_mgf(terms)
}

/// Link-scale ICC implied by `tau2`.
pub fn icc_from_tau2(outcome: Outcome, tau2: f64, intercept: f64, terms: &[Term]) -> f64 {
    match outcome {
        Outcome::Binary => tau2 / (tau2 + PI * PI / 3.0),
        Outcome::Count => {
            let mean = count_marginal_mean(intercept, tau2, terms);
            tau2 / (tau2 + (1.0 / mean).ln_1p())
        }
    }
}

/// Random-intercept variance giving the requested link-scale ICC.
pub fn solve_tau2(icc: f64, outcome: Outcome, terms: &[Term], intercept: f64) -> Result<f64> {
    if !(icc > 0.0 && icc < 1.0) {
        return Err(Error::Validation(format!("icc must lie in (0, 1), got {icc}")));
    }
    match outcome {
        Outcome::Binary => Ok(icc * (PI * PI / 3.0) / (1.0 - icc)),
        Outcome::Count => {
            let f = |t: f64| icc_from_tau2(outcome, t, intercept, terms) - icc;
            if f(TAU2_UPPER) < 0.0 {
                return Err(Error::Numerical(format!("no tau2 in (0, {TAU2_UPPER}] reaches icc {icc}")));
            }
            let (mut lo, mut hi) = (0.0, TAU2_UPPER);
            while hi - lo > TAU2_TOL {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// `E[expit(β⁰ + Σ b_k X_k + γ)]`, `γ ~ N(0, τ²)`: Gauss-Hermite over the
/// combined normal part, exact enumeration over the Bernoulli terms.
pub fn binary_marginal_prevalence(intercept: f64, tau2: f64, terms: &[Term]) -> Result<f64> {
    let (nodes, weights) = gauss_hermite(64)?;
    let normal_var: f64 = tau2
        + terms
            .iter()
            .filter(|t| t.dist == CovariateDist::Normal)
            .map(|t| t.coef * t.coef)
            .sum::<f64>();
    let bern: Vec<f64> = terms.iter().filter(|t| t.dist == CovariateDist::Bernoulli).map(|t| t.coef).collect();
    let scale = (2.0 * normal_var).sqrt();
    let n_combos = 1usize << bern.len();
    let mut total = 0.0;
    for mask in 0..n_combos {
        let shift: f64 = bern
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, b)| b)
            .sum();
        let inner: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * expit(intercept + shift + scale * x))
            .sum::<f64>()
            / PI.sqrt();
        total += inner;
    }
    Ok(total / n_combos as f64)
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intercept that gives a binary outcome the requested marginal prevalence.
pub fn solve_intercept_for_prevalence(target: f64, terms: &[Term], tau2: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Validation(format!("prevalence target must lie in (0, 1), got {target}")));
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    if binary_marginal_prevalence(lo, tau2, terms)? > target || binary_marginal_prevalence(hi, tau2, terms)? < target {
        return Err(Error::Numerical(format!("prevalence {target} is out of reach")));
    }
    while hi - lo > 1e-8 {
        let mid = 0.5 * (lo + hi);
        if binary_marginal_prevalence(mid, tau2, terms)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-scenario constants derived once: random-intercept variance and
/// intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedScenario {
    pub tau2: f64,
    pub intercept: f64,
}

pub fn resolve(scenario: &Scenario) -> Result<ResolvedScenario> {
    scenario.validate()?;
    let terms: Vec<Term> = scenario.active_terms().into_iter().map(|(_, t)| t).collect();
    let intercept0 = 0.0;
    let tau2 = solve_tau2(scenario.icc, scenario.outcome, &terms, intercept0)?;
    let intercept = match scenario.prevalence_target {
        Some(p) => solve_intercept_for_prevalence(p, &terms, tau2)?,
        None => intercept0,
    };
    Ok(ResolvedScenario { tau2, intercept })
}

/// Cluster sizes `R + 5` with `R` negative binomial of mean `s - 5` and
/// variance `(s · cv)²`, sampled as a gamma-Poisson mixture.
pub fn gen_cluster_sizes<R: Rng + ?Sized>(k: usize, mean_size: f64, cv: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(mean_size > 5.0) || !(cv >= 0.0) {
        return Err(Error::Validation(format!("need mean size > 5 and cv >= 0, got {mean_size}, {cv}")));
    }
    if cv == 0.0 {
        if mean_size.fract() != 0.0 {
            return Err(Error::Validation(format!("equal sizes need an integer mean, got {mean_size}")));
        }
        return Ok(vec![mean_size as usize; k]);
    }
    let m = mean_size - 5.0;
    let v = (mean_size * cv).powi(2);
    let draw_poisson = |lambda: f64, rng: &mut R| -> Result<usize> {
        if lambda <= 0.0 {
            return Ok(0);
        }
        let p = Poisson::new(lambda).map_err(|e| Error::Numerical(format!("Poisson({lambda}): {e}")))?;
        Ok(p.sample(rng) as usize)
    };
    if v < m {
        return Err(Error::Validation(format!(
            "size variance {v} is below the mean {m}; negative binomial unattainable"
        )));
    }
    let mut sizes = Vec::with_capacity(k);
    if v == m {
        for _ in 0..k {
            sizes.push(draw_poisson(m, rng)? + 5);
        }
        return Ok(sizes);
    }
    let r = m * m / (v - m);
    let gamma = Gamma::new(r, m / r).map_err(|e| Error::Numerical(format!("Gamma({r}): {e}")))?;
    for _ in 0..k {
        let lambda = gamma.sample(rng);
        sizes.push(draw_poisson(lambda, rng)? + 5);
    }
    Ok(sizes)
}

/// Randomizes half the clusters to treatment, stratified on cluster size
/// (below vs. above the median). Size ties are broken at random; when the
/// strata are odd a fair coin picks the stratum that gets the extra treated
/// cluster.
pub fn assign_treatment<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Vec<u8>> {
    let k = sizes.len();
    if k == 0 || k % 2 == 1 {
        return Err(Error::Validation(format!("treatment assignment needs an even number of clusters, got {k}")));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| sizes[i]);
    let half = k / 2;
    let (lower, upper) = order.split_at(half);
    let small = half / 2;
    let large = half - small;
    let (n_lower, n_upper) = if small == large || rng.random_bool(0.5) { (large, small) } else { (small, large) };
    let mut treatment = vec![0u8; k];
    for (stratum, n_treated) in [(lower, n_lower), (upper, n_upper)] {
        let mut members = stratum.to_vec();
        members.shuffle(rng);
        for &c in &members[..n_treated] {
            treatment[c] = 1;
        }
    }
    Ok(treatment)
}

fn draw_covariate<R: Rng + ?Sized>(dist: CovariateDist, rng: &mut R) -> f64 {
    match dist {
        CovariateDist::Normal => rng.sample::<f64, _>(rand_distr::StandardNormal),
        CovariateDist::Bernoulli => f64::from(u8::from(rng.random_bool(0.5))),
    }
}

/// `k` independent `N(0, tau2)` cluster intercepts.
pub fn draw_random_intercepts<R: Rng + ?Sized>(k: usize, tau2: f64, rng: &mut R) -> Result<Vec<f64>> {
    let re = Normal::new(0.0, tau2.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((0..k).map(|_| re.sample(rng)).collect())
}

/// One simulated trial under `scenario`. Clusters are numbered `1..=K`.
pub fn gen_dataset<R: Rng + ?Sized>(scenario: &Scenario, resolved: &ResolvedScenario, rng: &mut R) -> Result<ClusteredDataset> {
    let specs = scenario.design.covariates();
    let terms = scenario.active_terms();
    let coef_of: Vec<f64> = specs
        .iter()
        .map(|s| terms.iter().find(|(n, _)| *n == s.name).map_or(0.0, |(_, t)| t.coef))
        .collect();

    let sizes = gen_cluster_sizes(scenario.k, scenario.mean_size, scenario.cv, rng)?;
    let cluster_covs: Vec<Vec<f64>> = (0..scenario.k)
        .map(|_| {
            specs
                .iter()
                .map(|s| match s.level {
                    CovariateLevel::Cluster => draw_covariate(s.dist, rng),
                    CovariateLevel::Person => f64::NAN,
                })
                .collect()
        })
        .collect();
    let gammas = draw_random_intercepts(scenario.k, resolved.tau2, rng)?;
    let treatment = assign_treatment(&sizes, rng)?;

    let mut rows = Vec::with_capacity(sizes.iter().sum());
    for c in 0..scenario.k {
        for _ in 0..sizes[c] {
            let covariates: Vec<f64> = specs
                .iter()
                .zip(&cluster_covs[c])
                .map(|(s, &cv)| match s.level {
                    CovariateLevel::Cluster => cv,
                    CovariateLevel::Person => draw_covariate(s.dist, rng),
                })
                .collect();
            let eta = resolved.intercept
                + gammas[c]
                + covariates.iter().zip(&coef_of).map(|(x, b)| x * b).sum::<f64>();
            let outcome = match scenario.outcome {
                Outcome::Binary => f64::from(u8::from(rng.random::<f64>() < expit(eta))),
                Outcome::Count => {
                    let mu = eta.exp();
                    Poisson::new(mu)
                        .map_err(|e| Error::Numerical(format!("Poisson({mu}): {e}")))?
                        .sample(rng)
                }
            };
            rows.push(Row { cluster_id: c as i64 + 1, outcome, treatment: treatment[c], covariates });
        }
    }
    ClusteredDataset::new(
        specs.iter().map(|s| s.name.to_string()).collect(),
        specs.iter().map(|s| s.level).collect(),
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{Design, Dgm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn binary_tau2_closed_form() {
        let t = solve_tau2(0.05, Outcome::Binary, &[], 0.0).unwrap();
        assert!((t - 0.05 * PI * PI / 3.0 / 0.95).abs() < 1e-15);
        assert!((t - 0.173_151).abs() < 1e-6);
        assert!((icc_from_tau2(Outcome::Binary, t, 0.0, &[]) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn count_tau2_round_trips() {
        let terms = [
            Term { dist: CovariateDist::Normal, coef: 0.7 },
            Term { dist: CovariateDist::Bernoulli, coef: 0.8 },
        ];
        for icc in [0.001, 0.01, 0.05, 0.1, 0.2] {
            for t in [&terms[..], &[]] {
                let tau2 = solve_tau2(icc, Outcome::Count, t, 0.0).unwrap();
                assert!((icc_from_tau2(Outcome::Count, tau2, 0.0, t) - icc).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn prevalence_solver() {
        assert!(solve_intercept_for_prevalence(0.5, &[], 0.3).unwrap().abs() < 1e-7);
        let terms = [
            Term { dist: CovariateDist::Normal, coef: 0.35 },
            Term { dist: CovariateDist::Bernoulli, coef: -0.5 },
            Term { dist: CovariateDist::Bernoulli, coef: 0.4 },
        ];
        let b = solve_intercept_for_prevalence(0.081, &terms, 0.2).unwrap();
        assert!(b < 0.0);
        assert!((binary_marginal_prevalence(b, 0.2, &terms).unwrap() - 0.081).abs() < 1e-8);
        let b2 = solve_intercept_for_prevalence(0.2, &terms, 0.2).unwrap();
        assert!(b2 > b);
    }

    #[test]
    fn equal_sizes_and_minimum_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(gen_cluster_sizes(6, 50.0, 0.0, &mut rng).unwrap(), vec![50; 6]);
        let sizes = gen_cluster_sizes(2000, 50.0, 1.5, &mut rng).unwrap();
        assert!(sizes.iter().all(|&s| s >= 5));
        assert!(gen_cluster_sizes(4, 50.0, 0.05, &mut rng).is_err());
    }

    #[test]
    fn arms_are_balanced_and_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [4usize, 10, 20] {
            for _ in 0..200 {
                let sizes = gen_cluster_sizes(k, 50.0, 0.75, &mut rng).unwrap();
                let t = assign_treatment(&sizes, &mut rng).unwrap();
                assert_eq!(t.iter().filter(|&&v| v == 1).count(), k / 2);
            }
        }
        assert!(assign_treatment(&[5, 6, 7], &mut rng).is_err());
    }

    #[test]
    fn datasets_satisfy_the_design_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Scenario::new(Design::Sim2, Outcome::Count, 10, 50.0, 0.75, 0.05, Dgm::D, 4).unwrap();
        let r = resolve(&s).unwrap();
        let d = gen_dataset(&s, &r, &mut rng).unwrap();
        assert_eq!(d.n_clusters(), 10);
        assert_eq!(d.covariate_names(), ["xp1", "xp2", "xp3", "xp4", "xc1", "xc2"]);
        let treated: std::collections::BTreeSet<i64> =
            d.rows().iter().filter(|r| r.treatment == 1).map(|r| r.cluster_id).collect();
        assert_eq!(treated.len(), 5);
    }
}
