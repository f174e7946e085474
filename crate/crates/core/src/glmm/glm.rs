//! Fixed-effects GLM fits: Newton-Raphson (IRLS) for the canonical links,
//! least squares for the Gaussian model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DesignMatrices, Family};

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    /// ML residual variance (Gaussian only).
    pub sigma2: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

const SCORE_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;

fn loglik(design: &DesignMatrices, y: &[f64], family: Family, eta: &DVector<f64>, sigma2: f64) -> f64 {
    (0..design.n_obs)
        .map(|i| family.loglik_kernel(y[i], eta[i], sigma2) + family.loglik_constant(y[i]))
        .sum()
}

/// Maximum-likelihood fit ignoring the clustering.
pub fn fit_glm(design: &DesignMatrices, y: &[f64], family: Family) -> Result<GlmFit> {
    if y.len() != design.n_obs {
        return Err(Error::Dimension(format!("{} outcomes for {} rows", y.len(), design.n_obs)));
    }
    family.validate_outcomes(y)?;
    let x = &design.x;
    let yv = DVector::from_column_slice(y);

    if family == Family::GaussianIdentity {
        let xtx = x.transpose() * x;
        let beta = xtx
            .cholesky()
            .ok_or_else(|| Error::Numerical("X'X is singular".into()))?
            .solve(&(x.transpose() * &yv));
        let resid = &yv - x * &beta;
        let n = design.n_obs as f64;
        let sigma2 = resid.norm_squared() / n;
        let ll = if sigma2 > 0.0 {
            -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
        } else {
            f64::INFINITY
        };
        return Ok(GlmFit {
            beta: beta.as_slice().to_vec(),
            loglik: ll,
            sigma2: Some(sigma2),
            converged: true,
            iterations: 1,
        });
    }

    // start from a working-response regression on a shrunk mean
    let mu0: Vec<f64> = y
        .iter()
        .map(|&v| match family {
            Family::BernoulliLogit => (v + 0.5) / 2.0,
            _ => v + 0.1,
        })
        .collect();
    let eta0 = DVector::from_iterator(
        design.n_obs,
        mu0.iter().map(|&m| match family {
            Family::BernoulliLogit => (m / (1.0 - m)).ln(),
            _ => m.ln(),
        }),
    );
    let w0 = DVector::from_iterator(
        design.n_obs,
        mu0.iter().map(|&m| match family {
            Family::BernoulliLogit => m * (1.0 - m),
            _ => m,
        }),
    );
    let z = DVector::from_fn(design.n_obs, |i, _| eta0[i] + (y[i] - mu0[i]) / w0[i]);
    let mut beta = weighted_solve(x, &w0, &z)?;
    let mut eta = x * &beta;
    let mut ll = loglik(design, y, family, &eta, 1.0);
    if !ll.is_finite() {
        beta = DVector::zeros(x.ncols());
        eta = x * &beta;
        ll = loglik(design, y, family, &eta, 1.0);
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let mut w = DVector::zeros(design.n_obs);
        let mut r = DVector::zeros(design.n_obs);
        for i in 0..design.n_obs {
            let t = family.unit_terms(y[i], eta[i], 1.0);
            w[i] = t.weight;
            r[i] = t.score;
        }
        let score = x.transpose() * &r;
        if score.amax() <= SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let info = weighted_gram(x, &w);
        let Some(chol) = info.cholesky() else {
            break;
        };
        let step = chol.solve(&score);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_ll = loglik(design, y, family, &cand_eta, 1.0);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                let gain = cand_ll - ll;
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                improved = true;
                // rounding floor: the Newton decrement can no longer move the fit
                if gain.abs() <= 1e-14 * ll.abs().max(1.0) && score.dot(&step) <= 1e-16 * ll.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !improved || converged {
            break;
        }
    }
    Ok(GlmFit {
        beta: beta.as_slice().to_vec(),
        loglik: ll,
        sigma2: None,
        converged,
        iterations,
    })
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for mut col in xw.column_iter_mut() {
        col.component_mul_assign(w);
    }
    x.transpose() * xw
}

fn weighted_solve(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = x.transpose() * z.component_mul(w);
    weighted_gram(x, w)
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("weighted cross-product is singular".into()))
}
