use crt_glmm::glmm::FitControls;
use crt_glmm::harness::{run_scenario, DEFAULT_ALPHA};
use crt_glmm::inference::{DdfKind, TestKind};
use crt_glmm::sim::{Design, Dgm, Outcome, Scenario};

/// Largest gap between the empirical CDF of `p` and the uniform CDF.
fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn wald_residual_p_values_are_uniform_near_independence() {
    let sc = Scenario::new(Design::Sim1, Outcome::Binary, 20, 100.0, 0.0, 0.001, Dgm::A, 1).unwrap();
    let (_, outcomes) = run_scenario(&sc, 1000, 2024, 0, DEFAULT_ALPHA, &FitControls::default()).unwrap();
    let p: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.failure.is_none())
        .filter_map(|o| {
            o.tests
                .iter()
                .find(|t| t.test == TestKind::WaldT && t.ddf_kind == DdfKind::Residual)
                .and_then(|t| t.p_value)
        })
        .collect();
    assert!(p.len() >= 990, "{} usable p-values", p.len());
    let d = ks_uniform(p);
    assert!(d < 0.05, "KS distance {d}");
}

#[test]
fn completed_scenario_invariants() {
    let sc = Scenario::new(Design::Sim2, Outcome::Count, 10, 50.0, 0.75, 0.1, Dgm::D, 4).unwrap();
    let n_reps = 200;
    let (summary, outcomes) = run_scenario(&sc, n_reps, 7, 0, DEFAULT_ALPHA, &FitControls::default()).unwrap();
    assert_eq!(outcomes.len(), n_reps);
    for (i, o) in outcomes.iter().enumerate() {
        assert_eq!(o.rep_index, i as u64);
        if let Some(ddfs) = o.ddfs {
            assert!(ddfs.ordering_holds());
        }
        assert!(o.tests.iter().all(|t| t.p_value.is_none_or(|p| (0.0..=1.0).contains(&p))));
    }
    // LRT no more liberal than Wald, up to Monte Carlo slack
    for kind in DdfKind::ALL {
        let wald = summary.get(TestKind::WaldT, kind);
        let lrt = summary.get(TestKind::LrtF, kind);
        if wald.type1_rate.is_nan() || lrt.type1_rate.is_nan() {
            continue;
        }
        assert!(
            lrt.n_reject as f64 <= wald.n_reject as f64 + 2.0 * wald.mc_se * n_reps as f64,
            "{kind}: lrt {} vs wald {}",
            lrt.n_reject,
            wald.n_reject
        );
    }
    let slack = 0.01 + 3.0 * summary.sd_beta_trt / (n_reps as f64).sqrt();
    assert!(summary.mean_bias.abs() <= slack, "bias {} > {slack}", summary.mean_bias);
}

#[test]
fn sensitivity_design_runs_end_to_end() {
    let sc = Scenario::new(Design::Sensitivity, Outcome::Binary, 10, 50.0, 0.0, 0.05, Dgm::B, 2).unwrap();
    let (summary, _) = run_scenario(&sc, 50, 3, 0, DEFAULT_ALPHA, &FitControls::default()).unwrap();
    assert_eq!(summary.n_reps, 50);
    assert!(summary.failure_count < 5);
    assert!(summary.mean_lmm_icc.is_finite());
}
