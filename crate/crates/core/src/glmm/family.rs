//! Per-observation log-likelihood terms and their derivatives in the linear
//! predictor, for the canonical links.

use crate::model::Family;
use crate::special::ln_factorial;

/// Log-likelihood contribution and its first three derivatives in `eta`
/// (sign-flipped second and third so that `weight >= 0`).
#[derive(Debug, Clone, Copy)]
pub(crate) struct UnitTerms {
    pub loglik: f64,
    /// d loglik / d eta
    pub score: f64,
    /// -d² loglik / d eta²
    pub weight: f64,
    /// d weight / d eta
    pub dweight: f64,
}

#[inline]
pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

impl Family {
    /// Constant part of the log-likelihood that does not depend on `eta`
    /// or the dispersion (`-ln y!` for Poisson).
    #[inline]
    pub(crate) fn loglik_constant(self, y: f64) -> f64 {
        match self {
            Family::PoissonLog => -ln_factorial(y),
            _ => 0.0,
        }
    }

    /// Inverse link.
    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::BernoulliLogit => expit(eta),
            Family::PoissonLog => eta.exp(),
            Family::GaussianIdentity => eta,
        }
    }

    /// Log-likelihood without the `loglik_constant` part. `sigma2` is only
    /// used by the Gaussian family.
    #[inline]
    pub(crate) fn loglik_kernel(self, y: f64, eta: f64, sigma2: f64) -> f64 {
        match self {
            Family::BernoulliLogit => y * eta - softplus(eta),
            Family::PoissonLog => y * eta - eta.exp(),
            Family::GaussianIdentity => {
                let r = y - eta;
                -0.5 * r * r / sigma2 - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()
            }
        }
    }

    #[inline]
    pub(crate) fn unit_terms(self, y: f64, eta: f64, sigma2: f64) -> UnitTerms {
        match self {
            Family::BernoulliLogit => {
                let mu = expit(eta);
                let w = mu * (1.0 - mu);
                UnitTerms {
                    loglik: y * eta - softplus(eta),
                    score: y - mu,
                    weight: w,
                    dweight: w * (1.0 - 2.0 * mu),
                }
            }
            Family::PoissonLog => {
                let mu = eta.exp();
                UnitTerms {
                    loglik: y * eta - mu,
                    score: y - mu,
                    weight: mu,
                    dweight: mu,
                }
            }
            Family::GaussianIdentity => {
                let r = y - eta;
                UnitTerms {
                    loglik: -0.5 * r * r / sigma2
                        - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln(),
                    score: r / sigma2,
                    weight: 1.0 / sigma2,
                    dweight: 0.0,
                }
            }
        }
    }
}
