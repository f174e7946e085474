//! Random-intercept GLMM estimation.

mod family;
mod fit;
pub mod glm;
pub mod laplace;
pub mod lmm;
mod optim;
pub mod quadrature;

pub use fit::{fit_glmm, GlmmFit};
pub use glm::{fit_glm, GlmFit};
pub use laplace::{laplace_gradient_beta, marginal_loglik_laplace, LaplaceValue, Params};
pub use lmm::{fit_lmm_gaussian, LmmFit};
pub use quadrature::{cluster_loglik_quadrature, gauss_hermite, marginal_loglik_quadrature};

/// Convergence settings for [`fit_glmm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitControls {
    /// Outer convergence: Euclidean norm of the log-likelihood gradient.
    pub grad_tol: f64,
    /// Inner convergence: Newton step size for each cluster mode.
    pub inner_tol: f64,
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
}

impl Default for FitControls {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            inner_tol: 1e-10,
            max_outer_iter: 200,
            max_inner_iter: 50,
        }
    }
}
