//! Adaptive Gauss-Hermite quadrature for the random-intercept integral.
//!
//! Used as an accuracy reference for the Laplace approximation. Each
//! cluster's rule is centred at the Laplace mode and scaled by the Laplace
//! curvature, so a one-node rule reproduces the Laplace value.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{DesignMatrices, Family};

use super::laplace::{LaplaceEvaluator, Params};
use super::FitControls;

/// Nodes and weights for `∫ f(x) exp(-x²) dx`, nodes ascending.
///
/// Newton iteration on the orthonormal Hermite recurrence with the usual
/// asymptotic starting values.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Validation("quadrature needs at least one node".into()));
    }
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!("Gauss-Hermite root {i} of {n} did not converge")));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
    }
    x.reverse();
    w.reverse();
    Ok((x, w))
}

/// Per-cluster adaptive-quadrature log-likelihoods.
pub fn cluster_loglik_quadrature(
    design: &DesignMatrices,
    y: &[f64],
    family: Family,
    params: &Params,
    n_nodes: usize,
) -> Result<Vec<f64>> {
    let eval = LaplaceEvaluator::new(design, y, family)?;
    if !(params.tau2 > 0.0) {
        // no integral: the Laplace route already returns the exact GLM value
        let mut warm = Vec::new();
        return Ok(eval.evaluate(params, &mut warm, false, &FitControls::default())?.0.cluster_loglik);
    }
    let (nodes, weights) = gauss_hermite(n_nodes)?;
    let offset = eval.linear_predictor(&params.beta)?;
    let controls = FitControls::default();
    let (tau2, sigma2) = (params.tau2, params.sigma2);
    let mut out = Vec::with_capacity(design.n_clusters);
    for (i, rows) in design.cluster_rows.iter().enumerate() {
        let mode = eval.solve_mode(i, &offset, tau2, sigma2, 0.0, &controls)?;
        let scale = (2.0 / (mode.sum_weight + 1.0 / tau2)).sqrt();
        let constant: f64 = rows.iter().map(|&r| family.loglik_constant(y[r])).sum();
        let terms: Vec<f64> = nodes
            .iter()
            .zip(&weights)
            .map(|(&x, &w)| {
                let g = mode.gamma + scale * x;
                let data: f64 = rows
                    .iter()
                    .map(|&r| family.loglik_kernel(y[r], offset[r] + g, sigma2))
                    .sum();
                w.ln() + x * x + data - 0.5 * g * g / tau2
            })
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical(format!("non-finite quadrature terms in cluster {i}")));
        }
        let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        out.push(lse + scale.ln() - 0.5 * (2.0 * PI * tau2).ln() + constant);
    }
    Ok(out)
}

/// Adaptive Gauss-Hermite marginal log-likelihood with `n_nodes` per cluster.
pub fn marginal_loglik_quadrature(
    design: &DesignMatrices,
    y: &[f64],
    family: Family,
    params: &Params,
    n_nodes: usize,
) -> Result<f64> {
    Ok(cluster_loglik_quadrature(design, y, family, params, n_nodes)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_even_moments() {
        // ∫ x^{2k} e^{-x²} dx = Γ(k + 1/2)
        for n in [1usize, 2, 5, 10, 20, 50] {
            let (x, w) = gauss_hermite(n).unwrap();
            assert_eq!(x.len(), n);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            let exact_degree = 2 * n - 1;
            let mut gamma_half = PI.sqrt();
            for k in 0..=6usize {
                if 2 * k > exact_degree {
                    break;
                }
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32)).sum();
                assert!((approx - gamma_half).abs() < 1e-11 * gamma_half, "n {n} k {k}");
                gamma_half *= k as f64 + 0.5;
            }
        }
    }

    #[test]
    fn one_node_rule() {
        let (x, w) = gauss_hermite(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - PI.sqrt()).abs() < 1e-15);
        assert!(gauss_hermite(0).is_err());
    }
}
