#![allow(dead_code)]

use crt_glmm::model::{ClusteredDataset, CovariateLevel, DesignMatrices, Family, Row};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

/// Random clustered dataset with one person-level (`xp`) and one
/// cluster-level (`xc`) covariate; half the clusters are treated.
pub fn random_dataset<R: Rng>(
    rng: &mut R,
    family: Family,
    k: usize,
    max_size: usize,
    tau2: f64,
) -> ClusteredDataset {
    let re = Normal::new(0.0, tau2.sqrt()).unwrap();
    let mut rows = Vec::new();
    for c in 0..k {
        let n = rng.random_range(2..=max_size);
        let gamma = re.sample(rng);
        let xc = f64::from(u8::from(rng.random_bool(0.5)));
        let trt = u8::from(c % 2 == 1);
        for _ in 0..n {
            let xp: f64 = rng.sample(rand_distr::StandardNormal);
            let eta = -0.3 + 0.5 * xp + 0.4 * xc + gamma;
            let y = match family {
                Family::BernoulliLogit => f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))),
                Family::PoissonLog => Poisson::new(eta.exp()).unwrap().sample(rng),
                Family::GaussianIdentity => eta + rng.sample::<f64, _>(rand_distr::StandardNormal),
            };
            rows.push(Row { cluster_id: c as i64 + 1, outcome: y, treatment: trt, covariates: vec![xp, xc] });
        }
    }
    ClusteredDataset::new(
        vec!["xp".into(), "xc".into()],
        vec![CovariateLevel::Person, CovariateLevel::Cluster],
        rows,
    )
    .unwrap()
}

/// `log Σ exp(v)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Dense multivariate-normal profile likelihood over `λ = τ²/σ²`.
pub struct DenseLmm<'a> {
    pub design: &'a DesignMatrices,
    pub y: &'a [f64],
}

pub struct DenseProfile {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub loglik: f64,
}

impl DenseLmm<'_> {
    pub fn profile(&self, lambda: f64) -> DenseProfile {
        let p = self.design.n_fixed();
        let n = self.design.n_obs;
        let mut xtvx = DMatrix::<f64>::zeros(p, p);
        let mut xtvy = DVector::<f64>::zeros(p);
        let mut log_det = 0.0;
        let mut blocks = Vec::new();
        for rows in &self.design.cluster_rows {
            let m = rows.len();
            let v = DMatrix::<f64>::identity(m, m) + DMatrix::from_element(m, m, lambda);
            let chol = v.clone().cholesky().unwrap();
            log_det += 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let vinv = chol.inverse();
            let xi = DMatrix::from_fn(m, p, |a, j| self.design.x[(rows[a], j)]);
            let yi = DVector::from_fn(m, |a, _| self.y[rows[a]]);
            xtvx += xi.transpose() * &vinv * &xi;
            xtvy += xi.transpose() * &vinv * &yi;
            blocks.push((xi, yi, vinv));
        }
        let beta = xtvx.cholesky().unwrap().solve(&xtvy);
        let quad: f64 = blocks
            .iter()
            .map(|(xi, yi, vinv)| {
                let r = yi - xi * &beta;
                (r.transpose() * vinv * &r)[(0, 0)]
            })
            .sum();
        let sigma2 = quad / n as f64;
        let nf = n as f64;
        let loglik = -0.5 * (nf * (2.0 * std::f64::consts::PI * sigma2).ln() + log_det + nf);
        DenseProfile { beta, sigma2, loglik }
    }

    pub fn maximize(&self) -> (f64, DenseProfile) {
        // coarse scan in log λ, then golden section around the best cell
        let f = |u: f64| self.profile(u.exp()).loglik;
        let grid: Vec<f64> = (0..=200).map(|i| -12.0 + 0.1 * i as f64).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
            .unwrap();
        let (mut a, mut b) = (best - 0.1, best + 0.1);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-11 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let lambda = (0.5 * (a + b)).exp();
        (lambda, self.profile(lambda))
    }
}
