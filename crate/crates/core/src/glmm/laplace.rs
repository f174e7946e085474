//! Laplace approximation to the random-intercept marginal likelihood.
//!
//! For cluster `i` with offsets `o_ij = x_ij'β` the integrand in `γ` is
//! `exp(h_i(γ))`, `h_i(γ) = Σ_j log f(y_ij | o_ij + γ) - γ²/(2τ²)`, and the
//! approximation is `ℓ_i = h_i(γ̂_i) - ½ log(τ² · (-h_i''(γ̂_i)))`.
//! With a canonical link `-h''` is `Σ_j w_ij + 1/τ²`, so the log term is
//! evaluated as `log1p(τ² Σ_j w_ij)`.
//!
//! Gradients with respect to `β`, `τ²` and (Gaussian only) `σ²` are exact:
//! the envelope theorem removes the mode's dependence from `h`, and the
//! mode's derivatives enter the log term through `dγ̂/dβ = -Σ w x / H` and
//! `dγ̂/dτ² = γ̂ / (τ⁴ H)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{DesignMatrices, Family};

use super::FitControls;

/// Parameter point at which the marginal likelihood is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: Vec<f64>,
    pub tau2: f64,
    /// Residual variance; only read by the Gaussian family.
    pub sigma2: f64,
}

/// Laplace log-likelihood with its per-cluster pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceValue {
    pub loglik: f64,
    pub cluster_loglik: Vec<f64>,
    pub modes: Vec<f64>,
    /// Clusters whose inner Newton iteration did not reach `inner_tol`.
    pub inner_failures: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Gradient {
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ClusterMode {
    pub gamma: f64,
    /// `h(γ̂)` without the data constants.
    pub h: f64,
    /// `Σ_j w_ij` at the mode.
    pub sum_weight: f64,
    pub converged: bool,
}

/// Shared state for repeated evaluations on one dataset.
pub(crate) struct LaplaceEvaluator<'a> {
    pub design: &'a DesignMatrices,
    pub y: &'a [f64],
    pub family: Family,
    constant_by_cluster: Vec<f64>,
}

impl<'a> LaplaceEvaluator<'a> {
    pub fn new(design: &'a DesignMatrices, y: &'a [f64], family: Family) -> Result<Self> {
        if y.len() != design.n_obs {
            return Err(Error::Dimension(format!(
                "{} outcomes for {} design rows",
                y.len(),
                design.n_obs
            )));
        }
        family.validate_outcomes(y)?;
        let constant_by_cluster = design
            .cluster_rows
            .iter()
            .map(|rows| rows.iter().map(|&r| family.loglik_constant(y[r])).sum())
            .collect();
        Ok(Self {
            design,
            y,
            family,
            constant_by_cluster,
        })
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.design.n_fixed() {
            return Err(Error::Dimension(format!(
                "beta has {} entries, design has {} columns",
                beta.len(),
                self.design.n_fixed()
            )));
        }
        let eta = &self.design.x * DVector::from_column_slice(beta);
        Ok(eta.as_slice().to_vec())
    }

    /// `(h, h', Σw)` at `gamma` for one cluster.
    fn cluster_state(&self, rows: &[usize], offset: &[f64], gamma: f64, inv_tau2: f64, sigma2: f64) -> (f64, f64, f64) {
        let mut h = -0.5 * gamma * gamma * inv_tau2;
        let mut grad = -gamma * inv_tau2;
        let mut sw = 0.0;
        for &r in rows {
            let t = self.family.unit_terms(self.y[r], offset[r] + gamma, sigma2);
            h += t.loglik;
            grad += t.score;
            sw += t.weight;
        }
        (h, grad, sw)
    }

    /// Safeguarded Newton ascent on `h_i`, started at `start`.
    pub fn solve_mode(
        &self,
        cluster: usize,
        offset: &[f64],
        tau2: f64,
        sigma2: f64,
        start: f64,
        controls: &FitControls,
    ) -> Result<ClusterMode> {
        let rows = &self.design.cluster_rows[cluster];
        let inv_tau2 = 1.0 / tau2;
        let mut gamma = if start.is_finite() { start } else { 0.0 };
        let (mut h, mut grad, mut sw) = self.cluster_state(rows, offset, gamma, inv_tau2, sigma2);
        if !h.is_finite() && gamma != 0.0 {
            gamma = 0.0;
            (h, grad, sw) = self.cluster_state(rows, offset, gamma, inv_tau2, sigma2);
        }
        if !h.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite likelihood in cluster {cluster}"
            )));
        }
        let mut converged = false;
        for _ in 0..controls.max_inner_iter {
            let step = grad / (sw + inv_tau2);
            if step.abs() <= controls.inner_tol {
                converged = true;
                break;
            }
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=30 {
                let cand = gamma + scale * step;
                let (hc, gc, swc) = self.cluster_state(rows, offset, cand, inv_tau2, sigma2);
                if hc.is_finite() && hc >= h - 1e-13 * (1.0 + h.abs()) {
                    gamma = cand;
                    (h, grad, sw) = (hc, gc, swc);
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(ClusterMode {
            gamma,
            h,
            sum_weight: sw,
            converged,
        })
    }

    /// Evaluates the Laplace log-likelihood and, optionally, its gradient.
    /// `warm` holds starting modes and receives the new ones on success.
    pub fn evaluate(
        &self,
        params: &Params,
        warm: &mut Vec<f64>,
        want_gradient: bool,
        controls: &FitControls,
    ) -> Result<(LaplaceValue, Option<Gradient>)> {
        let Params { beta, tau2, sigma2 } = params;
        let (tau2, sigma2) = (*tau2, *sigma2);
        if !(tau2 >= 0.0) || !tau2.is_finite() {
            return Err(Error::Validation(format!("tau2 must be finite and >= 0, got {tau2}")));
        }
        if self.family.has_dispersion() && !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Validation(format!("sigma2 must be positive, got {sigma2}")));
        }
        let offset = self.linear_predictor(beta)?;
        let k = self.design.n_clusters;
        let p = self.design.n_fixed();
        if warm.len() != k {
            *warm = vec![0.0; k];
        }

        let mut modes = vec![0.0; k];
        let mut cluster_loglik = vec![0.0; k];
        let mut inner_failures = 0;
        let mut grad = want_gradient.then(|| Gradient {
            beta: vec![0.0; p],
            tau2: 0.0,
            sigma2: 0.0,
        });

        for i in 0..k {
            let rows = &self.design.cluster_rows[i];
            if tau2 == 0.0 {
                let mut ll = 0.0;
                for &r in rows {
                    ll += self.family.loglik_kernel(self.y[r], offset[r], sigma2);
                }
                cluster_loglik[i] = ll + self.constant_by_cluster[i];
                if let Some(g) = grad.as_mut() {
                    let mut score_sq = 0.0;
                    for &r in rows {
                        let t = self.family.unit_terms(self.y[r], offset[r], sigma2);
                        for (c, gb) in g.beta.iter_mut().enumerate() {
                            *gb += t.score * self.design.x[(r, c)];
                        }
                        score_sq += t.score * t.score;
                    }
                    if self.family.has_dispersion() {
                        g.sigma2 += 0.5 * score_sq - 0.5 * rows.len() as f64 / sigma2;
                    }
                }
                continue;
            }

            let mode = self.solve_mode(i, &offset, tau2, sigma2, warm[i], controls)?;
            if !mode.converged {
                inner_failures += 1;
            }
            modes[i] = mode.gamma;
            cluster_loglik[i] =
                mode.h - 0.5 * (tau2 * mode.sum_weight).ln_1p() + self.constant_by_cluster[i];

            if let Some(g) = grad.as_mut() {
                let gamma = mode.gamma;
                let mut score_x = vec![0.0; p];
                let mut weight_x = vec![0.0; p];
                let mut dweight_x = vec![0.0; p];
                let mut dweight = 0.0;
                let mut score_sq = 0.0;
                for &r in rows {
                    let t = self.family.unit_terms(self.y[r], offset[r] + gamma, sigma2);
                    dweight += t.dweight;
                    score_sq += t.score * t.score;
                    for c in 0..p {
                        let x = self.design.x[(r, c)];
                        score_x[c] += t.score * x;
                        weight_x[c] += t.weight * x;
                        dweight_x[c] += t.dweight * x;
                    }
                }
                let info = mode.sum_weight + 1.0 / tau2;
                for c in 0..p {
                    let d_info = dweight_x[c] - dweight * weight_x[c] / info;
                    g.beta[c] += score_x[c] - 0.5 * d_info / info;
                }
                let gamma_over_tau2 = gamma / tau2;
                g.tau2 += 0.5 * gamma_over_tau2 * gamma_over_tau2
                    - 0.5 * (mode.sum_weight + dweight * gamma_over_tau2 / info)
                        / (1.0 + tau2 * mode.sum_weight);
                if self.family.has_dispersion() {
                    let n = rows.len() as f64;
                    g.sigma2 += 0.5 * score_sq - 0.5 * n / sigma2 + 0.5 * n / (sigma2 * sigma2 * info);
                }
            }
        }

        let loglik: f64 = cluster_loglik.iter().sum();
        if !loglik.is_finite() {
            return Err(Error::Numerical("non-finite marginal log-likelihood".into()));
        }
        if let Some(g) = &grad {
            if g.beta.iter().any(|v| !v.is_finite()) || !g.tau2.is_finite() || !g.sigma2.is_finite() {
                return Err(Error::Numerical("non-finite gradient".into()));
            }
        }
        if tau2 > 0.0 {
            warm.copy_from_slice(&modes);
        }
        Ok((
            LaplaceValue {
                loglik,
                cluster_loglik,
                modes,
                inner_failures,
            },
            grad,
        ))
    }
}

/// Laplace-approximated marginal log-likelihood of a random-intercept GLMM.
///
/// `tau2 = 0` gives the plain GLM log-likelihood with all modes at zero.
/// For the Gaussian family the value is the exact marginal log-density.
pub fn marginal_loglik_laplace(
    design: &DesignMatrices,
    y: &[f64],
    family: Family,
    params: &Params,
) -> Result<LaplaceValue> {
    let eval = LaplaceEvaluator::new(design, y, family)?;
    let mut warm = Vec::new();
    Ok(eval.evaluate(params, &mut warm, false, &FitControls::default())?.0)
}

/// Gradient of [`marginal_loglik_laplace`] in `beta`.
pub fn laplace_gradient_beta(
    design: &DesignMatrices,
    y: &[f64],
    family: Family,
    params: &Params,
) -> Result<Vec<f64>> {
    let eval = LaplaceEvaluator::new(design, y, family)?;
    let mut warm = Vec::new();
    let (_, g) = eval.evaluate(params, &mut warm, true, &FitControls::default())?;
    Ok(g.expect("gradient requested").beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn small_design(sizes: &[usize]) -> DesignMatrices {
        let n: usize = sizes.iter().sum();
        let cluster_of_row: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &m)| std::iter::repeat_n(k, m))
            .collect();
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => (cluster_of_row[i] % 2) as f64,
            _ => ((i * 37 % 17) as f64 - 8.0) / 5.0,
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

    fn outcomes(family: Family, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| match family {
                Family::BernoulliLogit => ((i * 7 + 3) % 5 < 2) as u8 as f64,
                Family::PoissonLog => ((i * 5 + 1) % 4) as f64,
                Family::GaussianIdentity => ((i * 13 % 7) as f64 - 3.0) / 2.0,
            })
            .collect()
    }

    #[test]
    fn tau2_zero_is_the_glm_loglik() {
        let d = small_design(&[4, 6, 5]);
        let y = outcomes(Family::BernoulliLogit, 15);
        let beta = vec![0.2, -0.4, 0.3];
        let v = marginal_loglik_laplace(
            &d,
            &y,
            Family::BernoulliLogit,
            &Params { beta: beta.clone(), tau2: 0.0, sigma2: 1.0 },
        )
        .unwrap();
        let direct: f64 = (0..15)
            .map(|i| {
                let eta: f64 = (0..3).map(|c| d.x[(i, c)] * beta[c]).sum();
                let p = 1.0 / (1.0 + (-eta).exp());
                if y[i] == 1.0 { p.ln() } else { (1.0 - p).ln() }
            })
            .sum();
        assert!((v.loglik - direct).abs() < 1e-12);
        assert!(v.modes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn gaussian_laplace_is_the_exact_marginal_density() {
        let sizes = [3, 4, 2];
        let d = small_design(&sizes);
        let y = outcomes(Family::GaussianIdentity, 9);
        let params = Params { beta: vec![0.1, 0.5, -0.2], tau2: 0.7, sigma2: 1.3 };
        let v = marginal_loglik_laplace(&d, &y, Family::GaussianIdentity, &params).unwrap();
        // exact: y_i ~ N(X_i β, σ² I + τ² 11')
        let mut exact = 0.0;
        for rows in &d.cluster_rows {
            let m = rows.len();
            let cov = DMatrix::from_fn(m, m, |a, b| params.tau2 + if a == b { params.sigma2 } else { 0.0 });
            let r = DVector::from_fn(m, |a, _| {
                let i = rows[a];
                y[i] - (0..3).map(|c| d.x[(i, c)] * params.beta[c]).sum::<f64>()
            });
            let chol = cov.clone().cholesky().unwrap();
            let quad = r.dot(&chol.solve(&r));
            let logdet = cov.determinant().ln();
            exact += -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
        }
        assert!((v.loglik - exact).abs() < 1e-10, "{} vs {}", v.loglik, exact);
    }

    #[test]
    fn modes_are_stationary() {
        for family in [Family::BernoulliLogit, Family::PoissonLog] {
            let d = small_design(&[8, 5, 12, 7]);
            let y = outcomes(family, 32);
            let params = Params { beta: vec![-0.3, 0.4, 0.2], tau2: 0.4, sigma2: 1.0 };
            let v = marginal_loglik_laplace(&d, &y, family, &params).unwrap();
            for (i, rows) in d.cluster_rows.iter().enumerate() {
                let g = v.modes[i];
                let s: f64 = rows
                    .iter()
                    .map(|&r| {
                        let eta: f64 = (0..3).map(|c| d.x[(r, c)] * params.beta[c]).sum::<f64>() + g;
                        y[r] - family.mean(eta)
                    })
                    .sum();
                assert!((s - g / params.tau2).abs() < 1e-8, "{family} cluster {i}");
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        for family in [Family::BernoulliLogit, Family::PoissonLog, Family::GaussianIdentity] {
            let d = small_design(&[6, 9, 4, 7]);
            let y = outcomes(family, 26);
            let base = Params { beta: vec![0.1, -0.2, 0.35], tau2: 0.3, sigma2: 0.8 };
            let eval = LaplaceEvaluator::new(&d, &y, family).unwrap();
            let ctl = FitControls::default();
            let mut warm = Vec::new();
            let (_, g) = eval.evaluate(&base, &mut warm, true, &ctl).unwrap();
            let g = g.unwrap();
            let f = |p: &Params| eval.evaluate(p, &mut Vec::new(), false, &ctl).unwrap().0.loglik;
            let h = 1e-5;
            for c in 0..3 {
                let mut up = base.clone();
                up.beta[c] += h;
                let mut dn = base.clone();
                dn.beta[c] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g.beta[c]).abs() <= 1e-4 * fd.abs().max(1.0), "{family} beta[{c}]");
            }
            let mut up = base.clone();
            up.tau2 += h;
            let mut dn = base.clone();
            dn.tau2 -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - g.tau2).abs() <= 1e-4 * fd.abs().max(1.0), "{family} tau2");
            if family.has_dispersion() {
                let mut up = base.clone();
                up.sigma2 += h;
                let mut dn = base.clone();
                dn.sigma2 -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g.sigma2).abs() <= 1e-4 * fd.abs().max(1.0), "sigma2");
            }
        }
    }

    #[test]
    fn overflow_is_a_numerical_error_not_a_panic() {
        let d = small_design(&[3, 3]);
        let y = vec![1.0; 6];
        let params = Params { beta: vec![800.0, 0.0, 0.0], tau2: 0.5, sigma2: 1.0 };
        let r = marginal_loglik_laplace(&d, &y, Family::PoissonLog, &params);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = small_design(&[3, 3]);
        let y = vec![0.0; 6];
        let bad_tau = Params { beta: vec![0.0; 3], tau2: -1.0, sigma2: 1.0 };
        assert!(marginal_loglik_laplace(&d, &y, Family::BernoulliLogit, &bad_tau).is_err());
        let bad_beta = Params { beta: vec![0.0; 2], tau2: 1.0, sigma2: 1.0 };
        assert!(marginal_loglik_laplace(&d, &y, Family::BernoulliLogit, &bad_beta).is_err());
        assert!(marginal_loglik_laplace(&d, &y[..5], Family::BernoulliLogit, &bad_tau).is_err());
    }
}
