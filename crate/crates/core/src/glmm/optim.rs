//! Quasi-Newton minimization with a strong Wolfe line search.

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Trial {
    alpha: f64,
    f: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
    slope: f64,
}

/// `objective` returns `None` where the function is undefined; such points
/// are treated as `+inf` by the line search.
fn line_search<F>(objective: &mut F, x: &[f64], f0: f64, dir: &[f64], slope0: f64, alpha0: f64) -> Option<Trial>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut probe = |alpha: f64| -> Option<Trial> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let (f, grad) = objective(&xt)?;
        if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let slope = dot(&grad, dir);
        Some(Trial { alpha, f, x: xt, grad, slope })
    };
    let armijo = |t: &Trial| t.f <= f0 + C1 * t.alpha * slope0;
    let curvature = |t: &Trial| t.slope.abs() <= -C2 * slope0;
    // Near the optimum function differences drown in rounding; accept on
    // slope information alone when the value has not measurably increased.
    let f_noise = 1e-11 * f0.abs().max(1.0);
    let approx_wolfe =
        |t: &Trial| t.f <= f0 + f_noise && t.slope >= C2 * slope0 && t.slope <= -(1.0 - 2.0 * C1) * slope0;

    // bracketing phase
    let mut lo = Trial { alpha: 0.0, f: f0, x: x.to_vec(), grad: Vec::new(), slope: slope0 };
    let mut alpha = alpha0;
    let mut hi_alpha: f64;
    let mut hi_f: f64;
    let mut first = true;
    loop {
        match probe(alpha) {
            None => {
                hi_alpha = alpha;
                hi_f = f64::INFINITY;
                break;
            }
            Some(t) => {
                if approx_wolfe(&t) {
                    return Some(t);
                }
                if !armijo(&t) || (!first && t.f >= lo.f) {
                    hi_alpha = t.alpha;
                    hi_f = t.f;
                    break;
                }
                if curvature(&t) {
                    return Some(t);
                }
                if t.slope >= 0.0 {
                    hi_alpha = lo.alpha;
                    hi_f = lo.f;
                    lo = t;
                    break;
                }
                lo = t;
                if alpha > 1e6 {
                    return Some(lo);
                }
                alpha *= 2.0;
            }
        }
        first = false;
    }

    // zoom phase
    for _ in 0..40 {
        let (a, b) = (lo.alpha, hi_alpha);
        let width = (b - a).abs();
        if width < 1e-16 * a.abs().max(1.0) {
            break;
        }
        let mut trial_alpha = if hi_f.is_finite() {
            let denom = 2.0 * (hi_f - lo.f - lo.slope * (b - a));
            if denom > 0.0 {
                a - lo.slope * (b - a) * (b - a) / denom
            } else {
                0.5 * (a + b)
            }
        } else {
            a + 0.25 * (b - a)
        };
        let (left, right) = (a.min(b), a.max(b));
        trial_alpha = trial_alpha.clamp(left + 0.1 * width, right - 0.1 * width);
        match probe(trial_alpha) {
            None => {
                hi_alpha = trial_alpha;
                hi_f = f64::INFINITY;
            }
            Some(t) => {
                if approx_wolfe(&t) {
                    return Some(t);
                }
                if !armijo(&t) || t.f >= lo.f {
                    hi_alpha = t.alpha;
                    hi_f = t.f;
                } else {
                    if curvature(&t) {
                        return Some(t);
                    }
                    if t.slope * (hi_alpha - lo.alpha) >= 0.0 {
                        hi_alpha = lo.alpha;
                        hi_f = lo.f;
                    }
                    lo = t;
                }
            }
        }
    }
    // accept sufficient decrease without the curvature condition
    (lo.alpha > 0.0).then_some(lo)
}

/// Minimizes `objective` from `x0` by BFGS on the inverse Hessian.
/// Returns `None` when `x0` itself is not a valid point.
pub(crate) fn minimize_bfgs<F>(mut objective: F, x0: &[f64], opts: BfgsOptions) -> Option<BfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut f, mut grad) = objective(x0)?;
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    let mut x = x0.to_vec();
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = norm(&grad) <= opts.grad_tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut dir: Vec<f64> = mat_vec(&hinv, &grad).into_iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let alpha0 = if fresh { (1.0 / norm(&dir)).min(1.0) } else { 1.0 };
        let Some(trial) = line_search(&mut objective, &x, f, &dir, slope, alpha0) else {
            if fresh {
                break;
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = trial.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let f_change = f - trial.f;
        x = trial.x;
        f = trial.f;
        grad = trial.grad;
        if sy > 1e-12 * norm(&s) * norm(&yv) {
            if fresh {
                let scale = sy / dot(&yv, &yv);
                hinv = identity(n).into_iter().map(|row| row.into_iter().map(|v| v * scale).collect()).collect();
            }
            bfgs_update(&mut hinv, &s, &yv, sy);
            fresh = false;
        }
        converged = norm(&grad) <= opts.grad_tol;
        if !converged && f_change.abs() <= 1e-15 * f.abs().max(1.0) && norm(&s) <= 1e-14 * norm(&x).max(1.0) {
            break;
        }
    }
    Some(BfgsResult { x, iterations, converged })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`, `ρ = 1 / sᵀy`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Some((f, g))
    }

    #[test]
    fn solves_rosenbrock() {
        let r = minimize_bfgs(rosenbrock, &[-1.2, 1.0], BfgsOptions { grad_tol: 1e-8, max_iter: 500 }).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_in_few_steps() {
        let q = |x: &[f64]| Some((x[0] * x[0] + 10.0 * x[1] * x[1] + x[0] * x[1], vec![2.0 * x[0] + x[1], 20.0 * x[1] + x[0]]));
        let r = minimize_bfgs(q, &[3.0, -2.0], BfgsOptions { grad_tol: 1e-10, max_iter: 50 }).unwrap();
        assert!(r.converged && r.iterations < 15);
    }

    #[test]
    fn respects_undefined_regions() {
        // -ln x + x, minimum at 1, undefined for x <= 0
        let f = |x: &[f64]| (x[0] > 0.0).then(|| (-x[0].ln() + x[0], vec![-1.0 / x[0] + 1.0]));
        let r = minimize_bfgs(f, &[0.05], BfgsOptions { grad_tol: 1e-10, max_iter: 100 }).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!(minimize_bfgs(f, &[-1.0], BfgsOptions { grad_tol: 1e-10, max_iter: 100 }).is_none());
    }
}
