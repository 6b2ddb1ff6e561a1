#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robreg_core::{Dataset, Theta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

/// Gaussian predictors, `y = X beta + sigma * noise`.
pub fn random_dataset<R: Rng>(r: &mut R, n: usize, p: usize, sigma: f64) -> (Dataset<f64>, DVector<f64>) {
    let pred = DMatrix::from_fn(n, p, |_, _| normal(r));
    let beta = DVector::from_fn(p + 1, |_, _| r.random_range(-2.0..2.0));
    let d = Dataset::from_predictors(DVector::zeros(n), &pred).unwrap();
    let y = d.x() * &beta + DVector::from_fn(n, |_, _| sigma * normal(r));
    (Dataset::new(y, d.x().clone()).unwrap(), beta)
}

/// Least squares by the normal equations (independent of the QR path in the library).
pub fn ols_oracle(d: &Dataset<f64>) -> (DVector<f64>, f64) {
    let xtx = d.x().tr_mul(d.x());
    let beta = xtx.cholesky().expect("full rank").solve(&d.x().tr_mul(d.y()));
    let r = d.y() - d.x() * &beta;
    let sigma = (r.norm_squared() / d.n() as f64).sqrt();
    (beta, sigma)
}

/// Per-observation divergence loss written out directly from the density.
pub fn loss_oracle(theta: &Theta<f64>, d: &Dataset<f64>, alpha: f64) -> f64 {
    let s = theta.sigma;
    let mut total = 0.0;
    for i in 0..d.n() {
        let r = d.y()[i] - d.x().row(i).transpose().dot(&theta.beta);
        let f = (-(r * r) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        total += if alpha == 0.0 {
            -f.ln()
        } else {
            (2.0 * std::f64::consts::PI).powf(-alpha / 2.0) * s.powf(-alpha) / (1.0 + alpha).sqrt()
                - (1.0 + alpha) / alpha * f.powf(alpha)
        };
    }
    total / d.n() as f64
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[j] += h;
        b[j] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

/// Central finite-difference Jacobian of a vector function (columns are partials).
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut a = x.clone();
        let mut b = x.clone();
        a[j] += h;
        b[j] -= h;
        out.set_column(j, &((f(&a) - f(&b)) / (2.0 * h)));
    }
    out
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}
