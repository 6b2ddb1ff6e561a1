//! Large-sample distribution of the estimator and influence-function
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Theta};
use crate::dpd::{density_power, eta_alpha, xi_alpha, DpdConfig};
use crate::error::{Error, Result};
use crate::linalg::{select_columns, select_entries};
use crate::penalty::PenaltySpec;
use crate::scalar::Real;
use crate::selection::raic_parts;
use crate::solver::FittedModel;

/// Asymptotic moments of `sqrt(n) (beta_A_hat - beta_A)` and of the scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSummary<T: Real> {
    /// Coefficient indices the summary refers to (intercept first).
    pub active: Vec<usize>,
    /// `(xi_2a / xi_a^2) Sigma_A^-1`.
    pub cov_beta: DMatrix<T>,
    pub bias: DVector<T>,
    /// Asymptotic variance of `sqrt(n) (sigma_hat^2 - sigma^2)`.
    pub sigma2_var: T,
    pub xi_a: T,
    pub xi_2a: T,
    pub eta_a: T,
    pub eta_2a: T,
    /// `beta_A_hat - bias / sqrt(n)`.
    pub debiased_beta: DVector<T>,
}

pub fn asymptotic_summary<T: Real>(model: &FittedModel<T>, d: &Dataset<T>, alpha: T) -> Result<AsymptoticSummary<T>> {
    DpdConfig::new(alpha)?;
    let parts = raic_parts(model, d, alpha)?;
    let k = parts.sigma_star.nrows() - 1;
    let mut active: Vec<usize> = model.active.indices().to_vec();
    if active.first() != Some(&0) {
        active.insert(0, 0);
    }
    let sigma = model.theta.sigma;
    let two = alpha * T::lit(2.0);
    let bias = parts.bias.rows(0, k).into_owned();
    let beta_a = select_entries(&model.theta.beta, &active);
    let debiased_beta = &beta_a - &bias / T::from_count(d.n()).sqrt();
    Ok(AsymptoticSummary {
        active,
        cov_beta: parts.sigma_star.view((0, 0), (k, k)).into_owned(),
        bias,
        sigma2_var: parts.sigma_star[(k, k)],
        xi_a: xi_alpha(alpha, sigma),
        xi_2a: xi_alpha(two, sigma),
        eta_a: eta_alpha(alpha, sigma),
        eta_2a: eta_alpha(two, sigma),
        debiased_beta,
    })
}

/// `Psi_n + P''(beta) / (1 + alpha)` with the scale row and column appended.
fn psi_matrix<T: Real>(theta: &Theta<T>, d: &Dataset<T>, alpha: T, pen: &PenaltySpec<T>) -> DMatrix<T> {
    let dim = d.x().ncols();
    let n = T::from_count(d.n());
    let mut m = DMatrix::zeros(dim + 1, dim + 1);
    let gram = d.x().tr_mul(d.x()) * (xi_alpha(alpha, theta.sigma) / n);
    let ppp = pen.second_deriv_matrix(&theta.beta) / (T::one() + alpha);
    m.view_mut((0, 0), (dim, dim)).copy_from(&(gram + ppp));
    m[(dim, dim)] = eta_alpha(alpha, theta.sigma);
    m
}

/// Mean score `(1/n) sum_i [f(t_i)^alpha u(t_i) + (0, (alpha/2) xi_alpha)]`,
/// where the last entry is the component for `sigma^2`.
fn mean_score<T: Real>(theta: &Theta<T>, x: &DMatrix<T>, t: &DVector<T>, alpha: T) -> DVector<T> {
    let dim = x.ncols();
    let n = T::from_count(x.nrows());
    let s2 = theta.sigma * theta.sigma;
    let fitted = x * &theta.beta;
    let mut out = DVector::zeros(dim + 1);
    let mut sig = T::zero();
    for i in 0..x.nrows() {
        let r = t[i] - fitted[i];
        let w = density_power(r, theta.sigma, alpha);
        if w == T::zero() {
            continue;
        }
        let c = w * r / s2;
        for j in 0..dim {
            out[j] += c * x[(i, j)];
        }
        sig += w * (r * r - s2) / (T::lit(2.0) * s2 * s2);
    }
    let centering = alpha * T::lit(0.5) * xi_alpha(alpha, theta.sigma);
    let mut v = out / n;
    v[dim] = sig / n + centering;
    v
}

/// Influence function at `theta_g` of contaminating observation `i` with
/// response `t_i`. Returns `p + 2` entries: the coefficients, then `sigma^2`.
pub fn influence_function<T: Real>(
    theta_g: &Theta<T>,
    d: &Dataset<T>,
    t: &DVector<T>,
    alpha: T,
    pen: &PenaltySpec<T>,
) -> Result<DVector<T>> {
    DpdConfig::new(alpha)?;
    if alpha == T::zero() {
        return Err(Error::AlphaZero);
    }
    if t.len() != d.n() || theta_g.beta.len() != d.x().ncols() {
        return Err(Error::DimensionMismatch("probe vector or beta does not match data".into()));
    }
    let lu = psi_matrix(theta_g, d, alpha, pen).lu();
    lu.solve(&mean_score(theta_g, d.x(), t, alpha)).ok_or(Error::SingularPsi)
}

/// Influence function evaluated over a grid of probe offsets from the fitted surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceAssessment<T: Real> {
    /// Probe offsets: every `t_i` is set to `x_i^T beta + probe`.
    pub points: Vec<T>,
    /// `(p + 2) x points.len()`, one column per probe.
    pub if_values: DMatrix<T>,
    /// Max-norm of each column.
    pub norms: Vec<T>,
    pub sup_norm: T,
}

pub fn influence_curve<T: Real>(
    model: &FittedModel<T>,
    d: &Dataset<T>,
    alpha: T,
    probe_grid: &[T],
) -> Result<InfluenceAssessment<T>> {
    DpdConfig::new(alpha)?;
    if alpha == T::zero() {
        return Err(Error::AlphaZero);
    }
    let theta = &model.theta;
    let lu = psi_matrix(theta, d, alpha, &model.penalty).lu();
    let fitted = d.x() * &theta.beta;
    let dim = d.x().ncols() + 1;
    let mut if_values = DMatrix::zeros(dim, probe_grid.len());
    let mut norms = Vec::with_capacity(probe_grid.len());
    let mut sup = T::zero();
    for (k, &probe) in probe_grid.iter().enumerate() {
        let t = fitted.map(|f| f + probe);
        let v = lu.solve(&mean_score(theta, d.x(), &t, alpha)).ok_or(Error::SingularPsi)?;
        let norm = v.amax();
        if norm > sup {
            sup = norm;
        }
        norms.push(norm);
        if_values.set_column(k, &v);
    }
    Ok(InfluenceAssessment {
        points: probe_grid.to_vec(),
        if_values,
        norms,
        sup_norm: sup,
    })
}

/// Limit of the influence function as the probe moves to infinity:
/// zero for the coefficients, `(alpha/2) xi_alpha / eta_alpha` for `sigma^2`.
pub fn influence_limit<T: Real>(theta: &Theta<T>, alpha: T, dim: usize) -> DVector<T> {
    let mut v = DVector::zeros(dim + 1);
    v[dim] = alpha * T::lit(0.5) * xi_alpha(alpha, theta.sigma) / eta_alpha(alpha, theta.sigma);
    v
}

/// Classical large-sample covariance `Sigma_A^-1` of the active-set design, for reference.
pub fn gram_inverse<T: Real>(d: &Dataset<T>, active: &[usize]) -> Result<DMatrix<T>> {
    let xa = select_columns(d.x(), active);
    (xa.tr_mul(&xa) / T::from_count(d.n()))
        .try_inverse()
        .ok_or(Error::SingularGram)
}
