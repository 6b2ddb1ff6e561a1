//! Density power divergence loss for the normal linear model.
//!
//! For `alpha > 0` each observation contributes
//!
//! ```text
//! V_i = (2 pi)^(-alpha/2) sigma^(-alpha) (1 + alpha)^(-1/2) - ((1 + alpha) / alpha) f_i^alpha
//! ```
//!
//! and for `alpha = 0` it contributes `-log f_i`. The term of the divergence
//! that depends only on the data is dropped, so loss values are comparable
//! across parameters at a fixed `alpha` but never across `alpha`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Theta};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, weighted_gram};
use crate::penalty::PenaltySpec;
use crate::scalar::Real;

/// Robustness parameter of the divergence, restricted to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpdConfig<T: Real> {
    pub alpha: T,
}

impl<T: Real> DpdConfig<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::AlphaOutOfRange(alpha.to_f64_lossy()));
        }
        Ok(Self { alpha })
    }

    pub fn is_likelihood(&self) -> bool {
        self.alpha == T::zero()
    }
}

/// Penalized objective split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T: Real> {
    pub value: T,
    pub unpenalized: T,
    pub penalty_part: T,
}

impl<T: Real> LossReport<T> {
    fn new(unpenalized: T, penalty_part: T) -> Self {
        Self {
            value: unpenalized + penalty_part,
            unpenalized,
            penalty_part,
        }
    }
}

/// Normal density of a residual `r` at scale `sigma`.
#[inline]
pub fn density_of_residual<T: Real>(r: T, sigma: T) -> T {
    let z = r / sigma;
    (-(z * z) * T::lit(0.5)).exp() / (sigma * T::two_pi().sqrt())
}

/// `f^alpha` evaluated without forming `f` (stable for large residuals).
#[inline]
pub(crate) fn density_power<T: Real>(r: T, sigma: T, alpha: T) -> T {
    if alpha == T::zero() {
        return T::one();
    }
    let z = r / sigma;
    let log_f = -(T::two_pi() * sigma * sigma).ln() * T::lit(0.5) - z * z * T::lit(0.5);
    (alpha * log_f).exp()
}

/// Model-density integral `int f^(1+alpha) = (2 pi)^(-alpha/2) sigma^(-alpha) (1+alpha)^(-1/2)`.
#[inline]
pub(crate) fn density_integral<T: Real>(sigma: T, alpha: T) -> T {
    T::two_pi().powf(-alpha * T::lit(0.5)) * sigma.powf(-alpha) / (T::one() + alpha).sqrt()
}

fn check_dims<T: Real>(theta: &Theta<T>, d: &Dataset<T>) -> Result<()> {
    if theta.beta.len() != d.x().ncols() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, design has {} columns",
            theta.beta.len(),
            d.x().ncols()
        )));
    }
    Ok(())
}

/// Normal density of `y` given predictor row `x` (intercept entry included).
pub fn density_f<T: Real>(theta: &Theta<T>, x: &DVector<T>, y: T) -> T {
    density_of_residual(y - x.dot(&theta.beta), theta.sigma)
}

/// Per-observation divergence term for `alpha > 0`.
pub fn v_term<T: Real>(theta: &Theta<T>, x: &DVector<T>, y: T, alpha: T) -> Result<T> {
    if alpha == T::zero() {
        return Err(Error::AlphaZero);
    }
    let r = y - x.dot(&theta.beta);
    Ok(density_integral(theta.sigma, alpha)
        - (T::one() + alpha) / alpha * density_power(r, theta.sigma, alpha))
}

/// Mean unpenalized loss given residuals.
pub(crate) fn mean_loss_from_residuals<T: Real>(r: &DVector<T>, sigma: T, alpha: T) -> T {
    let n = T::from_count(r.len());
    if alpha == T::zero() {
        let rss = r.norm_squared();
        (T::two_pi() * sigma * sigma).ln() * T::lit(0.5) + rss / (T::lit(2.0) * n * sigma * sigma)
    } else {
        let s: T = r.iter().fold(T::zero(), |acc, &ri| acc + density_power(ri, sigma, alpha));
        density_integral(sigma, alpha) - (T::one() + alpha) / alpha * s / n
    }
}

/// Penalized objective `(1/n) sum V_i + sum_{j>=1} P(|beta_j|)`.
pub fn dpd_loss<T: Real>(
    theta: &Theta<T>,
    d: &Dataset<T>,
    cfg: &DpdConfig<T>,
    pen: &PenaltySpec<T>,
) -> Result<LossReport<T>> {
    check_dims(theta, d)?;
    let r = d.residuals(&theta.beta);
    let unpen = mean_loss_from_residuals(&r, theta.sigma, cfg.alpha);
    Ok(LossReport::new(unpen, pen.total(&theta.beta)))
}

/// Gradient of the unpenalized loss in `beta`:
/// `-((1 + alpha) / n) sum_i u_i f_i^alpha` with `u_i = r_i x_i / sigma^2`.
pub fn grad_beta<T: Real>(theta: &Theta<T>, d: &Dataset<T>, cfg: &DpdConfig<T>) -> DVector<T> {
    let r = d.residuals(&theta.beta);
    grad_from_residuals(d.x(), &r, theta.sigma, cfg.alpha)
}

pub(crate) fn grad_from_residuals<T: Real>(x: &DMatrix<T>, r: &DVector<T>, sigma: T, alpha: T) -> DVector<T> {
    let n = T::from_count(r.len());
    let s2 = sigma * sigma;
    let w = r.map(|ri| ri * density_power(ri, sigma, alpha));
    x.tr_mul(&w) * (-(T::one() + alpha) / (n * s2))
}

/// Hessian of the unpenalized loss in `beta`:
/// `((1 + alpha) / (n sigma^2)) sum_i f_i^alpha (1 - alpha r_i^2 / sigma^2) x_i x_i^T`.
///
/// Not necessarily positive semi-definite away from the optimum; the
/// surrogate step applies a jitter policy when factorizing it.
pub fn hessian_beta<T: Real>(theta: &Theta<T>, d: &Dataset<T>, cfg: &DpdConfig<T>) -> DMatrix<T> {
    let r = d.residuals(&theta.beta);
    hessian_from_residuals(d.x(), &r, theta.sigma, cfg.alpha)
}

pub(crate) fn hessian_from_residuals<T: Real>(x: &DMatrix<T>, r: &DVector<T>, sigma: T, alpha: T) -> DMatrix<T> {
    let n = T::from_count(r.len());
    let s2 = sigma * sigma;
    let scale = (T::one() + alpha) / (n * s2);
    let w = r.map(|ri| scale * density_power(ri, sigma, alpha) * (T::one() - alpha * ri * ri / s2));
    let mut h = weighted_gram(x, &w);
    symmetrize(&mut h);
    h
}

/// Left side of the scale estimating equation,
/// `-alpha (2 pi)^(-alpha/2) sigma^(-alpha) (1+alpha)^(-1/2) + ((1+alpha)/n) sum (1 - r_i^2/sigma^2) f_i^alpha`.
///
/// It equals `sigma` times the derivative of the unpenalized loss in `sigma`.
pub fn sigma_equation<T: Real>(theta: &Theta<T>, d: &Dataset<T>, cfg: &DpdConfig<T>) -> T {
    let r = d.residuals(&theta.beta);
    sigma_equation_from_residuals(&r, theta.sigma, cfg.alpha)
}

pub(crate) fn sigma_equation_from_residuals<T: Real>(r: &DVector<T>, sigma: T, alpha: T) -> T {
    let n = T::from_count(r.len());
    let s2 = sigma * sigma;
    let sum = r.iter().fold(T::zero(), |acc, &ri| {
        acc + (T::one() - ri * ri / s2) * density_power(ri, sigma, alpha)
    });
    -alpha * density_integral(sigma, alpha) + (T::one() + alpha) * sum / n
}

/// `xi_alpha = (2 pi)^(-alpha/2) sigma^(-(alpha+2)) (1+alpha)^(-3/2)`.
pub fn xi_alpha<T: Real>(alpha: T, sigma: T) -> T {
    T::two_pi().powf(-alpha * T::lit(0.5))
        * sigma.powf(-(alpha + T::lit(2.0)))
        * (T::one() + alpha).powf(T::lit(-1.5))
}

/// `eta_alpha = (1/4) (2 pi)^(-alpha/2) sigma^(-(alpha+4)) (2 + alpha^2) (1+alpha)^(-5/2)`.
pub fn eta_alpha<T: Real>(alpha: T, sigma: T) -> T {
    T::lit(0.25)
        * T::two_pi().powf(-alpha * T::lit(0.5))
        * sigma.powf(-(alpha + T::lit(4.0)))
        * (T::lit(2.0) + alpha * alpha)
        * (T::one() + alpha).powf(T::lit(-2.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn theta0(sigma: f64) -> Theta<f64> {
        Theta::new(DVector::from_vec(vec![0.0]), sigma).unwrap()
    }

    #[test]
    fn density_examples() {
        let x = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(density_f(&theta0(1.0), &x, 0.0), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(density_f(&theta0(1.0), &x, 1.0), 0.241_970_724_519_143_37, epsilon = 1e-15);
        assert_relative_eq!(density_f(&theta0(2.0), &x, 0.0), 0.199_471_140_200_716_35, epsilon = 1e-15);
    }

    #[test]
    fn v_term_examples() {
        let x = DVector::from_vec(vec![1.0]);
        let v = v_term(&theta0(1.0), &x, 0.0, 1.0).unwrap();
        let expect = 1.0 / (4.0 * std::f64::consts::PI).sqrt() - 2.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(v, expect, epsilon = 1e-15);
        assert!((v + 0.515790).abs() < 1e-6);

        let far = v_term(&theta0(1.0), &x, 1e6, 0.5).unwrap();
        let limit = (2.0 * std::f64::consts::PI).powf(-0.25) * 1.5f64.powf(-0.5);
        assert_relative_eq!(far, limit, epsilon = 1e-15);

        assert_eq!(v_term(&theta0(1.0), &x, 0.0, 0.0).unwrap_err(), Error::AlphaZero);
    }

    #[test]
    fn single_observation_loss_equals_v_term() {
        let d = Dataset::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::from_element(2, 1, 1.0)).unwrap();
        let l = dpd_loss(&theta0(1.0), &d, &DpdConfig::new(1.0).unwrap(), &PenaltySpec::none()).unwrap();
        assert!((l.value + 0.515790).abs() < 1e-6);
        assert_eq!(l.value, l.unpenalized + l.penalty_part);
    }

    #[test]
    fn xi_eta_examples() {
        assert_relative_eq!(xi_alpha(0.0, 1.0), 1.0);
        assert_relative_eq!(eta_alpha(0.0, 1.0), 0.5);
        assert_relative_eq!(xi_alpha(0.0, 2.0), 0.25);
        let e = (2.0 * std::f64::consts::PI).powf(-0.5) * 2f64.powf(-1.5);
        assert_relative_eq!(xi_alpha(1.0, 1.0), e, epsilon = 1e-15);
        assert!((xi_alpha(1.0f64, 1.0) - 0.141047).abs() < 1e-6);
    }

    #[test]
    fn alpha_range_enforced() {
        assert!(DpdConfig::new(1.0).is_ok());
        assert_eq!(DpdConfig::new(1.5).unwrap_err(), Error::AlphaOutOfRange(1.5));
        assert!(DpdConfig::new(-0.1).is_err());
    }

    #[test]
    fn zero_residual_gradient_vanishes() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 1.0, -1.0, 1.0, 2.0]);
        let beta = DVector::from_vec(vec![0.3, -0.7]);
        let d = Dataset::new(&x * &beta, x).unwrap();
        let th = Theta::new(beta, 0.8).unwrap();
        for a in [0.0, 0.4] {
            assert!(grad_beta(&th, &d, &DpdConfig::new(a).unwrap()).amax() < 1e-15);
        }
    }
}
