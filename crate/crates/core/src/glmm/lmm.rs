//! Gaussian random-intercept model by maximum likelihood.
//!
//! With `λ = τ²/σ²` the cluster covariance is `σ²(I + λ11')`, whose inverse
//! is `σ⁻²(I - c 11')` with `c = λ/(1 + λ n_i)`. For fixed `λ`, `β` is a GLS
//! solve and `σ²` has a closed form, so the likelihood is profiled to a
//! one-dimensional search in `log λ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::independent_columns;
use crate::model::DesignMatrices;

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    /// Coefficients of aliased columns are NaN.
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub sigma2: f64,
    pub loglik: f64,
    /// `τ² / (τ² + σ²)`; 0 when both are 0.
    pub icc: f64,
    pub dropped_columns: Vec<usize>,
    pub warnings: Vec<String>,
}

struct ClusterSums {
    n: f64,
    xtx: DMatrix<f64>,
    xsum: DVector<f64>,
    xty: DVector<f64>,
    ysum: f64,
    yty: f64,
}

struct Profile {
    sums: Vec<ClusterSums>,
    n_obs: f64,
    p: usize,
}

struct ProfilePoint {
    loglik: f64,
    beta: DVector<f64>,
    sigma2: f64,
}

impl Profile {
    fn at(&self, lambda: f64) -> Option<ProfilePoint> {
        let mut a = DMatrix::zeros(self.p, self.p);
        let mut b = DVector::zeros(self.p);
        let mut log_det = 0.0;
        for s in &self.sums {
            let c = lambda / (1.0 + lambda * s.n);
            a += &s.xtx - &s.xsum * s.xsum.transpose() * c;
            b += &s.xty - &s.xsum * (c * s.ysum);
            log_det += (lambda * s.n).ln_1p();
        }
        let beta = a.cholesky()?.solve(&b);
        let mut rss = 0.0;
        for s in &self.sums {
            let c = lambda / (1.0 + lambda * s.n);
            let fitted_sum = s.xsum.dot(&beta);
            rss += s.yty - 2.0 * beta.dot(&s.xty) + beta.dot(&(&s.xtx * &beta)) - c * (s.ysum - fitted_sum).powi(2);
        }
        let sigma2 = (rss / self.n_obs).max(0.0);
        let loglik = -0.5 * self.n_obs * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * log_det;
        Some(ProfilePoint { loglik, beta, sigma2 })
    }
}

const LOG_LAMBDA_MIN: f64 = -15.0;
const LOG_LAMBDA_MAX: f64 = 10.0;
const GRID_STEP: f64 = 0.25;

/// ML fit of `y = Xβ + Z γ + ε`, `γ ~ N(0, τ²)`, `ε ~ N(0, σ²)`.
pub fn fit_lmm_gaussian(design: &DesignMatrices, y: &[f64]) -> Result<LmmFit> {
    if y.len() != design.n_obs {
        return Err(Error::Dimension(format!("{} outcomes for {} rows", y.len(), design.n_obs)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("outcomes must be finite".into()));
    }
    let mut warnings = Vec::new();
    let keep = independent_columns(&design.x, 1e-9);
    let dropped: Vec<usize> = (0..design.n_fixed()).filter(|j| !keep.contains(j)).collect();
    if !dropped.is_empty() {
        let names: Vec<&str> = dropped.iter().map(|&j| design.column_names[j].as_str()).collect();
        warnings.push(format!("dropped aliased columns: {}", names.join(", ")));
    }
    let p = keep.len();
    let sums = design
        .cluster_rows
        .iter()
        .map(|rows| {
            let xi = DMatrix::from_fn(rows.len(), p, |a, b| design.x[(rows[a], keep[b])]);
            let yi = DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]));
            ClusterSums {
                n: rows.len() as f64,
                xtx: xi.transpose() * &xi,
                xsum: DVector::from_fn(p, |j, _| xi.column(j).sum()),
                xty: xi.transpose() * &yi,
                ysum: yi.sum(),
                yty: yi.norm_squared(),
            }
        })
        .collect();
    let profile = Profile { sums, n_obs: design.n_obs as f64, p };

    let expand = |beta: &DVector<f64>| {
        let mut full = vec![f64::NAN; design.n_fixed()];
        for (k, &j) in keep.iter().enumerate() {
            full[j] = beta[k];
        }
        full
    };

    let at_zero = profile
        .at(0.0)
        .ok_or_else(|| Error::Numerical("X'X is singular".into()))?;
    let scale = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if at_zero.sigma2 <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        warnings.push("outcome is fitted exactly; variance components set to 0".into());
        return Ok(LmmFit {
            beta: expand(&at_zero.beta),
            tau2: 0.0,
            sigma2: 0.0,
            loglik: f64::INFINITY,
            icc: 0.0,
            dropped_columns: dropped,
            warnings,
        });
    }

    let objective = |u: f64| profile.at(u.exp()).map_or(f64::NEG_INFINITY, |pt| pt.loglik);
    let n_grid = ((LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) / GRID_STEP).round() as usize;
    let mut best_u = None;
    let mut best_ll = at_zero.loglik;
    for g in 0..=n_grid {
        let u = LOG_LAMBDA_MIN + g as f64 * GRID_STEP;
        let ll = objective(u);
        if ll > best_ll {
            best_ll = ll;
            best_u = Some(u);
        }
    }

    let lambda = match best_u {
        None => 0.0,
        Some(u) => {
            if u >= LOG_LAMBDA_MAX {
                warnings.push("between-cluster variance at the upper search bound".into());
            }
            let (lo, hi) = ((u - GRID_STEP).max(LOG_LAMBDA_MIN), (u + GRID_STEP).min(LOG_LAMBDA_MAX));
            let u_hat = golden_section_max(objective, lo, hi, 1e-10);
            let lambda = u_hat.exp();
            if objective(u_hat) >= at_zero.loglik { lambda } else { 0.0 }
        }
    };
    let point = if lambda == 0.0 {
        at_zero
    } else {
        profile
            .at(lambda)
            .ok_or_else(|| Error::Numerical("GLS system became singular".into()))?
    };
    if lambda == 0.0 {
        warnings.push("boundary fit: between-cluster variance estimated as 0".into());
    }
    let tau2 = lambda * point.sigma2;
    let total = tau2 + point.sigma2;
    Ok(LmmFit {
        beta: expand(&point.beta),
        tau2,
        sigma2: point.sigma2,
        loglik: point.loglik,
        icc: if total > 0.0 { tau2 / total } else { 0.0 },
        dropped_columns: dropped,
        warnings,
    })
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
