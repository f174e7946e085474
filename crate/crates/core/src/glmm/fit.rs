use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{independent_columns, reciprocal_condition};
use crate::model::{DesignMatrices, Family};

use super::glm::fit_glm;
use super::laplace::{LaplaceEvaluator, Params};
use super::optim::{minimize_bfgs, BfgsOptions};
use super::FitControls;

/// Laplace maximum-likelihood fit of a random-intercept GLMM.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmmFit {
    pub family: Family,
    /// One entry per design column; aliased columns hold NaN.
    pub beta_hat: Vec<f64>,
    /// Model-based standard errors from the observed information of `β`.
    pub se: Vec<f64>,
    pub tau2_hat: f64,
    /// `τ̂² = 0`: the random-intercept variance sits on its boundary.
    pub at_boundary: bool,
    pub sigma2_hat: Option<f64>,
    pub loglik: f64,
    /// Conditional modes of the cluster intercepts, in cluster order.
    pub modes: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub dropped_columns: Vec<usize>,
    pub warnings: Vec<String>,
}

const ALIAS_TOL: f64 = 1e-9;
/// Fitted probabilities (or Poisson means) within about 3e-7 of the boundary.
const SEPARATION_ETA: f64 = 15.0;
const MAX_THETA: f64 = 10.0;

/// Fits `g(E[y | γ]) = Xβ + Zγ`, `γ ~ N(0, τ²)` by maximizing the Laplace
/// likelihood over `(β, τ, log σ)`.
pub fn fit_glmm(design: &DesignMatrices, y: &[f64], family: Family, controls: &FitControls) -> Result<GlmmFit> {
    let full_p = design.n_fixed();
    let keep = independent_columns(&design.x, ALIAS_TOL);
    let dropped: Vec<usize> = (0..full_p).filter(|j| !keep.contains(j)).collect();
    let mut warnings = Vec::new();
    let reduced;
    let work = if dropped.is_empty() {
        design
    } else {
        let names: Vec<&str> = dropped.iter().map(|&j| design.column_names[j].as_str()).collect();
        warnings.push(format!("dropped aliased columns: {}", names.join(", ")));
        let mut d = design.clone();
        for &j in dropped.iter().rev() {
            d = d.drop_column(j);
        }
        reduced = d;
        &reduced
    };
    let eval = LaplaceEvaluator::new(work, y, family)?;
    let p = work.n_fixed();
    let dispersion = family.has_dispersion();

    let glm = fit_glm(work, y, family)?;
    if !glm.converged {
        warnings.push("fixed-effects start did not converge".into());
    }
    let sigma2_start = glm.sigma2.unwrap_or(1.0);
    if dispersion && !(sigma2_start > 0.0) {
        return Err(Error::Numerical("outcome is fitted exactly; residual variance is 0".into()));
    }
    let tau2_start = moment_tau2(&eval, &glm.beta, sigma2_start)?.max(0.01);

    let mut psi0 = glm.beta.clone();
    psi0.push(tau2_start.sqrt());
    if dispersion {
        psi0.push(0.5 * sigma2_start.ln());
    }
    let unpack = |psi: &[f64]| Params {
        beta: psi[..p].to_vec(),
        tau2: psi[p] * psi[p],
        sigma2: if dispersion { (2.0 * psi[p + 1]).exp() } else { 1.0 },
    };

    let mut warm = Vec::new();
    let objective = |psi: &[f64]| -> Option<(f64, Vec<f64>)> {
        let params = unpack(psi);
        let (value, grad) = eval.evaluate(&params, &mut warm, true, controls).ok()?;
        let grad = grad?;
        let mut g: Vec<f64> = grad.beta.iter().map(|v| -v).collect();
        g.push(-2.0 * psi[p] * grad.tau2);
        if dispersion {
            g.push(-2.0 * params.sigma2 * grad.sigma2);
        }
        Some((-value.loglik, g))
    };
    let opts = BfgsOptions { grad_tol: controls.grad_tol, max_iter: controls.max_outer_iter };
    let result = minimize_bfgs(objective, &psi0, opts)
        .ok_or_else(|| Error::Numerical("likelihood is not finite at the starting values".into()))?;

    let mut params = unpack(&result.x);
    let mut final_warm = Vec::new();
    let (mut value, mut grad) = eval.evaluate(&params, &mut final_warm, true, controls)?;
    // At τ² = 0 the likelihood is the GLM one, so the GLM fit is the
    // boundary maximizer; prefer it when the interior search ends no higher.
    if glm.converged && glm.beta.iter().all(|b| b.is_finite()) {
        let boundary = Params { beta: glm.beta.clone(), tau2: 0.0, sigma2: sigma2_start };
        let mut w = Vec::new();
        let (bv, bg) = eval.evaluate(&boundary, &mut w, true, controls)?;
        if bv.loglik >= value.loglik - 1e-10 * value.loglik.abs().max(1.0) {
            params = boundary;
            value = bv;
            grad = bg;
            final_warm = w;
        }
    }
    let grad = grad.expect("gradient requested");
    let mut outer_grad = grad.beta.clone();
    outer_grad.push(2.0 * params.tau2.sqrt() * grad.tau2);
    if dispersion {
        outer_grad.push(2.0 * params.sigma2 * grad.sigma2);
    }
    let gradient_norm = norm(&outer_grad);
    let mut converged = result.converged || gradient_norm <= controls.grad_tol;
    if !converged {
        warnings.push(format!(
            "optimizer stopped after {} iterations with gradient norm {gradient_norm:.3e}",
            result.iterations
        ));
    }
    if value.inner_failures > 0 {
        converged = false;
        warnings.push(format!("{} cluster modes did not converge", value.inner_failures));
    }

    if separation_suspected(&eval, &params, &value.modes) {
        converged = false;
        warnings.push("quasi-separation suspected: fitted linear predictor or variance is extreme".into());
    }

    let se = standard_errors(&eval, &params, &final_warm, controls, &mut warnings);

    let expand = |v: &[f64]| {
        let mut full = vec![f64::NAN; full_p];
        for (k, &j) in keep.iter().enumerate() {
            full[j] = v[k];
        }
        full
    };
    Ok(GlmmFit {
        family,
        beta_hat: expand(&params.beta),
        se: expand(&se),
        tau2_hat: params.tau2,
        at_boundary: params.tau2 == 0.0,
        sigma2_hat: dispersion.then_some(params.sigma2),
        loglik: value.loglik,
        modes: value.modes,
        converged,
        iterations: result.iterations,
        gradient_norm,
        dropped_columns: dropped,
        warnings,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Method-of-moments start for `τ²` from the cluster-mean working residuals
/// of the fixed-effects fit.
fn moment_tau2(eval: &LaplaceEvaluator<'_>, beta: &[f64], sigma2: f64) -> Result<f64> {
    let eta = eval.linear_predictor(beta)?;
    let mut ebar = Vec::with_capacity(eval.design.n_clusters);
    let mut inv_w = Vec::with_capacity(eval.design.n_clusters);
    for rows in &eval.design.cluster_rows {
        let (mut score, mut weight) = (0.0, 0.0);
        for &r in rows {
            let t = eval.family.unit_terms(eval.y[r], eta[r], sigma2);
            score += t.score;
            weight += t.weight;
        }
        if weight > 0.0 && weight.is_finite() {
            ebar.push(score / weight);
            inv_w.push(1.0 / weight);
        }
    }
    if ebar.len() < 2 {
        return Ok(0.0);
    }
    let k = ebar.len() as f64;
    let mean = ebar.iter().sum::<f64>() / k;
    let var = ebar.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let noise = inv_w.iter().sum::<f64>() / k;
    let est = var - noise;
    Ok(if est.is_finite() { est } else { 0.0 })
}

fn separation_suspected(eval: &LaplaceEvaluator<'_>, params: &Params, modes: &[f64]) -> bool {
    if params.tau2.sqrt() > MAX_THETA {
        return true;
    }
    let Ok(eta) = eval.linear_predictor(&params.beta) else {
        return true;
    };
    eval.design.cluster_of_row.iter().enumerate().any(|(r, &c)| {
        let e = eta[r] + modes[c];
        match eval.family {
            Family::BernoulliLogit => e.abs() > SEPARATION_ETA,
            Family::PoissonLog => e < -SEPARATION_ETA,
            Family::GaussianIdentity => false,
        }
    })
}

/// Inverse of the negated `β`-Hessian of the Laplace likelihood, holding the
/// variance parameters fixed; the Hessian is a central difference of the
/// analytic gradient.
fn standard_errors(
    eval: &LaplaceEvaluator<'_>,
    params: &Params,
    warm: &[f64],
    controls: &FitControls,
    warnings: &mut Vec<String>,
) -> Vec<f64> {
    let p = params.beta.len();
    let nan = vec![f64::NAN; p];
    let mut hess = DMatrix::zeros(p, p);
    for j in 0..p {
        let h = 1e-4 * (1.0 + params.beta[j].abs());
        let mut grads = [Vec::new(), Vec::new()];
        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
            let mut shifted = params.clone();
            shifted.beta[j] += sign * h;
            let mut w = warm.to_vec();
            match eval.evaluate(&shifted, &mut w, true, controls) {
                Ok((_, Some(g))) => grads[slot] = g.beta,
                _ => {
                    warnings.push("information matrix could not be evaluated".into());
                    return nan;
                }
            }
        }
        for k in 0..p {
            hess[(k, j)] = (grads[0][k] - grads[1][k]) / (2.0 * h);
        }
    }
    let info = -(&hess + hess.transpose()) * 0.5;
    let rcond = reciprocal_condition(&info);
    let Some(chol) = info.clone().cholesky() else {
        warnings.push("information matrix is not positive definite; standard errors unavailable".into());
        return nan;
    };
    if rcond < 1e-12 {
        warnings.push(format!("information matrix is ill-conditioned (rcond {rcond:.2e})"));
    }
    let cov = chol.inverse();
    (0..p).map(|j| cov[(j, j)].sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::marginal_loglik_laplace;

    fn clustered(k: usize, m: usize) -> DesignMatrices {
        let n = k * m;
        let cluster_of_row: Vec<usize> = (0..n).map(|i| i / m).collect();
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => ((i / m) % 2) as f64,
            _ => ((i * 37 % 23) as f64 - 11.0) / 6.0,
        });
        DesignMatrices::from_parts(
            x,
            vec!["(intercept)".into(), "treatment".into(), "x".into()],
            cluster_of_row,
            Some(0),
            Some(1),
        )
        .unwrap()
    }

    /// Deterministic pseudo-random outcomes with cluster heterogeneity.
    fn outcomes(d: &DesignMatrices, family: Family) -> Vec<f64> {
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut unif = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let shifts: Vec<f64> = (0..d.n_clusters).map(|_| unif() - 0.5).collect();
        (0..d.n_obs)
            .map(|i| {
                let eta = -0.4 + 0.3 * d.x[(i, 1)] + 0.5 * d.x[(i, 2)] + shifts[d.cluster_of_row[i]];
                let u = unif();
                match family {
                    Family::BernoulliLogit => (u < 1.0 / (1.0 + (-eta).exp())) as u8 as f64,
                    Family::PoissonLog => {
                        let (mut k, mut p, l) = (0.0, 1.0, (-eta.exp()).exp());
                        let mut v = u;
                        loop {
                            p *= v;
                            if p < l {
                                break k;
                            }
                            k += 1.0;
                            v = unif();
                        }
                    }
                    Family::GaussianIdentity => eta + (u - 0.5) * 2.0,
                }
            })
            .collect()
    }

    #[test]
    fn fit_is_a_stationary_maximum() {
        for family in [Family::BernoulliLogit, Family::PoissonLog, Family::GaussianIdentity] {
            let d = clustered(12, 25);
            let y = outcomes(&d, family);
            let fit = fit_glmm(&d, &y, family, &FitControls::default()).unwrap();
            assert!(fit.converged, "{family}: {:?}", fit.warnings);
            assert!(fit.gradient_norm <= 1e-6);
            assert!(fit.se.iter().all(|s| s.is_finite() && *s > 0.0));
            // perturbations do not increase the likelihood
            let sigma2 = fit.sigma2_hat.unwrap_or(1.0);
            for j in 0..3 {
                for delta in [-1e-3, 1e-3] {
                    let mut beta = fit.beta_hat.clone();
                    beta[j] += delta;
                    let v = marginal_loglik_laplace(&d, &y, family, &Params { beta, tau2: fit.tau2_hat, sigma2 })
                        .unwrap();
                    assert!(v.loglik <= fit.loglik + 1e-9);
                }
            }
        }
    }

    #[test]
    fn gaussian_glmm_matches_the_profiled_lmm() {
        let d = clustered(10, 8);
        let y = outcomes(&d, Family::GaussianIdentity);
        let glmm = fit_glmm(&d, &y, Family::GaussianIdentity, &FitControls::default()).unwrap();
        let lmm = crate::glmm::fit_lmm_gaussian(&d, &y).unwrap();
        assert!((glmm.loglik - lmm.loglik).abs() < 1e-8);
        assert!((glmm.tau2_hat - lmm.tau2).abs() < 1e-5);
        for j in 0..3 {
            assert!((glmm.beta_hat[j] - lmm.beta[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn aliased_column_is_dropped_with_nan() {
        let d = clustered(8, 10);
        let mut x = d.x.clone().insert_column(3, 0.0);
        let trt = x.column(1).clone_owned();
        x.set_column(3, &trt);
        let d2 = DesignMatrices::from_parts(
            x,
            vec!["(intercept)".into(), "treatment".into(), "x".into(), "copy".into()],
            d.cluster_of_row.clone(),
            Some(0),
            Some(1),
        )
        .unwrap();
        let y = outcomes(&d2, Family::BernoulliLogit);
        let fit = fit_glmm(&d2, &y, Family::BernoulliLogit, &FitControls::default()).unwrap();
        assert_eq!(fit.dropped_columns, vec![3]);
        assert!(fit.beta_hat[3].is_nan() && fit.se[3].is_nan());
        assert!(fit.beta_hat[1].is_finite());
    }

    #[test]
    fn complete_separation_is_flagged() {
        let d = clustered(6, 10);
        let y: Vec<f64> = (0..60).map(|i| d.x[(i, 1)]).collect();
        let fit = fit_glmm(&d, &y, Family::BernoulliLogit, &FitControls::default()).unwrap();
        assert!(!fit.converged);
        assert!(!fit.warnings.is_empty());
    }
}
