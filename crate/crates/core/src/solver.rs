//! Minimization of the penalized DPD objective.
//!
//! Each outer iteration replaces the loss in `beta` by its second-order
//! expansion, written as a least-squares problem `0.5 |Y* - Z b|^2`, solves
//! the penalized problem by cyclic coordinate descent, and then minimizes the
//! loss in `sigma` with `beta` held fixed.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ActiveSet, Dataset, Theta};
use crate::dpd::{
    dpd_loss, grad_from_residuals, hessian_from_residuals, mean_loss_from_residuals,
    sigma_equation_from_residuals, DpdConfig, LossReport,
};
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::penalty::{PenaltyFamily, PenaltySpec};
use crate::scalar::{median, robust_scale, Real, MAD_CONSISTENCY};

/// Lower bound applied to every scale estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;

const MAX_HALVINGS: usize = 30;
/// Proximal damping levels tried when plain step-halving fails: `1e-3 .. 1e3` times the curvature scale.
const DAMPING_STEPS: usize = 7;
const SIGMA_GRID: usize = 41;
const SIGMA_EXPANSIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Init<T: Real> {
    Ols,
    HuberPilot,
    Provided(Theta<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig<T: Real> {
    pub max_sweeps: usize,
    /// Largest absolute coordinate change accepted as converged.
    pub tol: T,
}

impl<T: Real> Default for InnerConfig<T> {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tol: T::lit(1e-9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig<T: Real> {
    pub alpha: T,
    pub penalty: PenaltySpec<T>,
    pub max_outer_iters: usize,
    /// Relative change of `(beta, sigma)` below which the fit stops.
    pub tol: T,
    pub init: Init<T>,
    pub inner: InnerConfig<T>,
    pub zero_threshold: T,
}

impl<T: Real> FitConfig<T> {
    pub fn new(alpha: T, penalty: PenaltySpec<T>) -> Self {
        Self {
            alpha,
            penalty,
            max_outer_iters: 100,
            tol: T::lit(1e-7),
            init: Init::HuberPilot,
            inner: InnerConfig::default(),
            zero_threshold: T::lit(1e-10),
        }
    }

    pub fn with_init(mut self, init: Init<T>) -> Self {
        self.init = init;
        self
    }

    fn validate(&self) -> Result<DpdConfig<T>> {
        if !(self.tol > T::zero()) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidInput("max_outer_iters must be at least 1".into()));
        }
        DpdConfig::new(self.alpha)
    }
}

/// Estimated parameters plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel<T: Real> {
    pub theta: Theta<T>,
    pub active: ActiveSet,
    pub converged: bool,
    pub outer_iters: usize,
    pub loss: LossReport<T>,
    pub alpha: T,
    pub penalty: PenaltySpec<T>,
    /// Penalized objective after every outer iteration, starting at the initial value.
    pub history: Vec<T>,
    /// Scale estimating equation at the returned parameters.
    pub sigma_equation_residual: T,
    /// False if any inner solve hit its sweep limit.
    pub inner_converged: bool,
}

/// Least-squares form of the local quadratic model of the loss in `beta`.
#[derive(Debug, Clone)]
pub struct Surrogate<T: Real> {
    /// Upper-triangular factor with `Z^T Z` equal to the (jittered) Hessian.
    pub z: DMatrix<T>,
    pub ystar: DVector<T>,
    /// Diagonal jitter added to the Hessian before factorizing (zero when none).
    pub jitter: T,
}

pub fn quadratic_surrogate<T: Real>(theta: &Theta<T>, d: &Dataset<T>, cfg: &DpdConfig<T>) -> Result<Surrogate<T>> {
    let r = d.residuals(&theta.beta);
    let g = grad_from_residuals(d.x(), &r, theta.sigma, cfg.alpha);
    let mut h = hessian_from_residuals(d.x(), &r, theta.sigma, cfg.alpha);
    let (chol, jitter) = cholesky_with_jitter(&h)?;
    if jitter > T::zero() {
        debug!("surrogate Hessian jittered by {:e}", jitter.to_f64_lossy());
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
    }
    let l = chol.l();
    let rhs = &h * &theta.beta - g;
    let ystar = l
        .solve_lower_triangular(&rhs)
        .ok_or(Error::IndefiniteSurrogate)?;
    Ok(Surrogate {
        z: l.transpose(),
        ystar,
        jitter,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution<T: Real> {
    pub beta: DVector<T>,
    pub sweeps: usize,
    /// False when the sweep limit was hit; `beta` is then the last iterate.
    pub converged: bool,
}

/// Minimizes `(1 / (2 m)) |Y* - Z b|^2 + sum_{j>=1} P(|b_j|)` by cyclic
/// coordinate descent started at `warm`, where `m` is `normalizer`.
///
/// Without an active penalty the system `Z b = Y*` is solved directly.
pub fn inner_pls_solve<T: Real>(
    z: &DMatrix<T>,
    ystar: &DVector<T>,
    penalty: &PenaltySpec<T>,
    warm: &DVector<T>,
    normalizer: T,
    inner: &InnerConfig<T>,
) -> InnerSolution<T> {
    let dim = z.ncols();
    if penalty.is_inactive() && z.is_square() {
        let direct = if is_upper_triangular(z) {
            z.solve_upper_triangular(ystar)
        } else {
            z.clone().qr().solve(ystar)
        };
        if let Some(beta) = direct {
            return InnerSolution { beta, sweeps: 0, converged: true };
        }
    }
    let gram = z.tr_mul(z) / normalizer;
    let c = z.tr_mul(ystar) / normalizer;
    let mut beta = warm.clone();
    let mut q = &gram * &beta;
    for sweep in 1..=inner.max_sweeps {
        let mut max_change = T::zero();
        for j in 0..dim {
            let curv = gram[(j, j)];
            if !(curv > T::zero()) {
                continue;
            }
            let old = beta[j];
            let lin = c[j] - (q[j] - curv * old);
            let new = if j == 0 {
                lin / curv
            } else {
                penalty.coordinate_minimizer(curv, lin)
            };
            let delta = new - old;
            if delta != T::zero() {
                beta[j] = new;
                q.axpy(delta, &gram.column(j), T::one());
                if delta.abs() > max_change {
                    max_change = delta.abs();
                }
            }
        }
        if max_change < inner.tol {
            return InnerSolution { beta, sweeps: sweep, converged: true };
        }
    }
    InnerSolution {
        beta,
        sweeps: inner.max_sweeps,
        converged: false,
    }
}

fn is_upper_triangular<T: Real>(m: &DMatrix<T>) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == T::zero()))
}

/// Scale of residuals used to place the default sigma bracket.
fn residual_scale<T: Real>(r: &DVector<T>) -> T {
    let floor = T::lit(SIGMA_FLOOR);
    let v: Vec<T> = r.iter().copied().collect();
    let s = robust_scale(&v);
    if s > floor {
        return s;
    }
    let rms = (r.norm_squared() / T::from_count(r.len())).sqrt();
    if rms > floor {
        rms
    } else {
        floor
    }
}

/// Minimizes the unpenalized loss over `sigma` with `beta` fixed.
///
/// `bracket` defaults to `[1e-3 s, 1e3 s]` with `s = 1.4826 * MAD` of the
/// residuals. For `alpha = 0` the closed-form maximum-likelihood scale is
/// returned.
pub fn update_sigma<T: Real>(
    beta: &DVector<T>,
    d: &Dataset<T>,
    cfg: &DpdConfig<T>,
    bracket: Option<(T, T)>,
) -> Result<T> {
    let r = d.residuals(beta);
    sigma_from_residuals(&r, cfg.alpha, bracket)
}

pub(crate) fn sigma_from_residuals<T: Real>(r: &DVector<T>, alpha: T, bracket: Option<(T, T)>) -> Result<T> {
    let floor = T::lit(SIGMA_FLOOR);
    let n = T::from_count(r.len());
    if alpha == T::zero() {
        let s = (r.norm_squared() / n).sqrt();
        return Ok(if s > floor { s } else { floor });
    }
    if r.amax() <= floor {
        return Ok(floor);
    }
    let (lo, hi) = match bracket {
        Some((lo, hi)) if lo > T::zero() && hi > lo => (lo, hi),
        Some(_) => return Err(Error::InvalidInput("sigma bracket must satisfy 0 < lo < hi".into())),
        None => {
            let s = residual_scale(r);
            (s * T::lit(1e-3), s * T::lit(1e3))
        }
    };
    let loss = |u: T| mean_loss_from_residuals(r, u.exp(), alpha);
    let (mut ulo, mut uhi) = (lo.ln(), hi.ln());
    let widen = T::lit(1e3).ln();
    for expansion in 0..=SIGMA_EXPANSIONS {
        let step = (uhi - ulo) / T::from_count(SIGMA_GRID - 1);
        let grid: Vec<T> = (0..SIGMA_GRID).map(|k| ulo + step * T::from_count(k)).collect();
        let vals: Vec<T> = grid.iter().map(|&u| loss(u)).collect();
        let mut best = 0;
        for k in 1..SIGMA_GRID {
            if vals[k] < vals[best] {
                best = k;
            }
        }
        if best == 0 || best == SIGMA_GRID - 1 {
            if expansion == SIGMA_EXPANSIONS {
                break;
            }
            if best == 0 {
                ulo -= widen;
            } else {
                uhi += widen;
            }
            continue;
        }
        let (a, b) = (grid[best - 1], grid[best + 1]);
        let u = refine_log_sigma(r, alpha, a, b, vals[best]);
        let sigma = u.exp();
        return Ok(if sigma > floor { sigma } else { floor });
    }
    Err(Error::BracketFailure)
}

/// Locates the minimizer of the scale loss inside `[a, b]` (log scale):
/// bisection on the estimating equation when it changes sign, golden
/// section otherwise.
fn refine_log_sigma<T: Real>(r: &DVector<T>, alpha: T, a: T, b: T, grid_best: T) -> T {
    let loss = |u: T| mean_loss_from_residuals(r, u.exp(), alpha);
    let eq = |u: T| sigma_equation_from_residuals(r, u.exp(), alpha);
    let (mut a, mut b) = (a, b);
    let (fa, fb) = (eq(a), eq(b));
    if fa < T::zero() && fb > T::zero() {
        for _ in 0..200 {
            let m = (a + b) * T::lit(0.5);
            if m <= a || m >= b {
                break;
            }
            if eq(m) < T::zero() {
                a = m;
            } else {
                b = m;
            }
        }
        let u = (a + b) * T::lit(0.5);
        if loss(u) <= grid_best {
            return u;
        }
    }
    golden_section(loss, a, b, T::lit(1e-10))
}

fn golden_section<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, tol: T) -> T {
    let g = (T::lit(5.0).sqrt() - T::one()) * T::lit(0.5);
    let (mut a, mut b) = (a, b);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (T::one() + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) * T::lit(0.5)
}

fn objective<T: Real>(r: &DVector<T>, beta: &DVector<T>, sigma: T, alpha: T, pen: &PenaltySpec<T>) -> T {
    mean_loss_from_residuals(r, sigma, alpha) + pen.total(beta)
}

fn initial_theta<T: Real>(d: &Dataset<T>, init: &Init<T>) -> Result<Theta<T>> {
    match init {
        Init::Ols => Ok(fit_ols(d)?.theta),
        Init::HuberPilot => Ok(fit_huber_pilot(d)?.theta),
        Init::Provided(t) => {
            if t.beta.len() != d.x().ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "initial beta has {} entries, design has {} columns",
                    t.beta.len(),
                    d.x().ncols()
                )));
            }
            Ok(t.clone())
        }
    }
}

fn theta_norm<T: Real>(beta: &DVector<T>, sigma: T) -> T {
    (beta.norm_squared() + sigma * sigma).sqrt()
}

/// Fits the penalized minimum-DPD estimator.
///
/// Expects standardized data. A run that exhausts `max_outer_iters` still
/// returns the last iterate, with `converged = false`.
pub fn fit_mdpde<T: Real>(d: &Dataset<T>, cfg: &FitConfig<T>) -> Result<FittedModel<T>> {
    let dpd = cfg.validate()?;
    let alpha = cfg.alpha;
    let pen = &cfg.penalty;
    let mut theta = initial_theta(d, &cfg.init)?;
    let mut r = d.residuals(&theta.beta);
    let mut current = objective(&r, &theta.beta, theta.sigma, alpha, pen);
    let mut history = vec![current];
    let mut converged = false;
    let mut inner_converged = true;
    let mut iters = 0;

    for it in 1..=cfg.max_outer_iters {
        iters = it;
        let sur = quadratic_surrogate(&theta, d, &dpd)?;
        let sol = inner_pls_solve(&sur.z, &sur.ystar, pen, &theta.beta, T::one(), &cfg.inner);
        if !sol.converged {
            inner_converged = false;
            warn!("inner solve stopped at {} sweeps", sol.sweeps);
        }

        let mut accepted = halving_step(d, &theta, &sol.beta, current, alpha, pen);
        if accepted.is_none() {
            // the surrogate minimizer is not a descent direction (e.g. across a
            // concave SCAD region): re-solve with a growing proximal term
            let scale = sur.z.tr_mul(&sur.z).diagonal().amax();
            for k in 0..DAMPING_STEPS {
                let mu = scale * T::lit(10f64.powi(k as i32 - 3));
                let (z, ystar) = damped_surrogate(&sur, &theta.beta, mu);
                let damped = inner_pls_solve(&z, &ystar, pen, &theta.beta, T::one(), &cfg.inner);
                accepted = halving_step(d, &theta, &damped.beta, current, alpha, pen);
                if accepted.is_some() {
                    debug!("damped step accepted at mu = {:e}", mu.to_f64_lossy());
                    break;
                }
            }
        }
        let beta = match accepted {
            Some((b, rc, val)) => {
                r = rc;
                current = val;
                b
            }
            None => theta.beta.clone(),
        };

        let mut sigma = theta.sigma;
        match sigma_from_residuals(&r, alpha, None) {
            Ok(s) => {
                let val = objective(&r, &beta, s, alpha, pen);
                if val <= current {
                    sigma = s;
                    current = val;
                }
            }
            Err(Error::BracketFailure) if it > 1 => {
                warn!("scale bracket failed at iteration {it}; keeping previous sigma");
            }
            Err(e) => return Err(e),
        }
        history.push(current);

        let change = theta_norm(&(&beta - &theta.beta), sigma - theta.sigma);
        let scale = T::one() + theta_norm(&theta.beta, theta.sigma);
        theta = Theta { beta, sigma };
        if change / scale < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("{}", Error::NoConvergence(iters));
    }
    finish(d, &dpd, theta, pen, cfg.zero_threshold, converged, iters, history, inner_converged)
}

/// Step-halving from `theta.beta` toward `target`; returns the first candidate
/// that does not increase the objective at the current scale.
fn halving_step<T: Real>(
    d: &Dataset<T>,
    theta: &Theta<T>,
    target: &DVector<T>,
    current: T,
    alpha: T,
    pen: &PenaltySpec<T>,
) -> Option<(DVector<T>, DVector<T>, T)> {
    let mut step = target - &theta.beta;
    for _ in 0..=MAX_HALVINGS {
        let cand = &theta.beta + &step;
        let rc = d.residuals(&cand);
        let val = objective(&rc, &cand, theta.sigma, alpha, pen);
        if val <= current {
            return Some((cand, rc, val));
        }
        step *= T::lit(0.5);
    }
    None
}

/// Surrogate rows augmented by `sqrt(mu) (b - beta0)`, i.e. `Z^T Z + mu I`.
fn damped_surrogate<T: Real>(sur: &Surrogate<T>, beta0: &DVector<T>, mu: T) -> (DMatrix<T>, DVector<T>) {
    let (rows, dim) = sur.z.shape();
    let root = mu.sqrt();
    let mut z = DMatrix::zeros(rows + dim, dim);
    z.view_mut((0, 0), (rows, dim)).copy_from(&sur.z);
    let mut y = DVector::zeros(rows + dim);
    y.rows_mut(0, rows).copy_from(&sur.ystar);
    for j in 0..dim {
        z[(rows + j, j)] = root;
        y[rows + j] = root * beta0[j];
    }
    (z, y)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    d: &Dataset<T>,
    dpd: &DpdConfig<T>,
    mut theta: Theta<T>,
    pen: &PenaltySpec<T>,
    zero_threshold: T,
    converged: bool,
    outer_iters: usize,
    history: Vec<T>,
    inner_converged: bool,
) -> Result<FittedModel<T>> {
    for b in theta.beta.iter_mut().skip(1) {
        if b.abs() <= zero_threshold {
            *b = T::zero();
        }
    }
    let loss = dpd_loss(&theta, d, dpd, pen)?;
    let r = d.residuals(&theta.beta);
    let sigma_equation_residual = sigma_equation_from_residuals(&r, theta.sigma, dpd.alpha);
    Ok(FittedModel {
        active: ActiveSet::from_beta(&theta.beta, zero_threshold),
        theta,
        converged,
        outer_iters,
        loss,
        alpha: dpd.alpha,
        penalty: *pen,
        history,
        sigma_equation_residual,
        inner_converged,
    })
}

/// Largest violation of the stationarity / subgradient conditions of the
/// penalized objective in `beta`.
pub fn kkt_residual<T: Real>(m: &FittedModel<T>, d: &Dataset<T>) -> T {
    let r = d.residuals(&m.theta.beta);
    let g = grad_from_residuals(d.x(), &r, m.theta.sigma, m.alpha);
    let slack = match m.penalty.family {
        PenaltyFamily::None => T::zero(),
        _ => m.penalty.lambda,
    };
    let mut worst = T::zero();
    for (j, (&gj, &bj)) in g.iter().zip(m.theta.beta.iter()).enumerate() {
        let v = if j == 0 {
            gj.abs()
        } else if bj != T::zero() {
            let pd = m.penalty.deriv(bj.abs()).unwrap_or(T::zero());
            (gj + bj.signum() * pd).abs()
        } else {
            let over = gj.abs() - slack;
            if over > T::zero() {
                over
            } else {
                T::zero()
            }
        };
        if v > worst {
            worst = v;
        }
    }
    worst
}

/// Least squares by QR of the full design.
fn least_squares<T: Real>(x: &DMatrix<T>, y: &DVector<T>) -> Result<DVector<T>> {
    if x.nrows() <= x.ncols() {
        return Err(Error::SingularDesign);
    }
    let qr = x.clone().qr();
    let rmat = qr.r();
    let dmax = rmat.diagonal().amax();
    if !(dmax > T::zero()) || rmat.diagonal().iter().any(|v| v.abs() <= dmax * T::lit(1e-12)) {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().tr_mul(y);
    rmat.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)
}

fn weighted_least_squares<T: Real>(x: &DMatrix<T>, y: &DVector<T>, w: &DVector<T>) -> Result<DVector<T>> {
    let mut xw = x.clone();
    let mut yw = y.clone();
    for i in 0..x.nrows() {
        let s = w[i].sqrt();
        xw.row_mut(i).scale_mut(s);
        yw[i] *= s;
    }
    least_squares(&xw, &yw)
}

fn floor_sigma<T: Real>(s: T) -> T {
    let floor = T::lit(SIGMA_FLOOR);
    if s > floor {
        s
    } else {
        floor
    }
}

fn plain_model<T: Real>(d: &Dataset<T>, beta: DVector<T>, sigma: T, iters: usize, converged: bool) -> Result<FittedModel<T>> {
    let theta = Theta::new(beta, floor_sigma(sigma))?;
    let dpd = DpdConfig::new(T::zero())?;
    let pen = PenaltySpec::none();
    let loss = dpd_loss(&theta, d, &dpd, &pen)?;
    let r = d.residuals(&theta.beta);
    Ok(FittedModel {
        active: ActiveSet::from_beta(&theta.beta, T::zero()),
        sigma_equation_residual: sigma_equation_from_residuals(&r, theta.sigma, T::zero()),
        theta,
        converged,
        outer_iters: iters,
        loss,
        alpha: T::zero(),
        penalty: pen,
        history: vec![loss.value],
        inner_converged: true,
    })
}

/// Ordinary least squares with the maximum-likelihood scale `sqrt(RSS / n)`.
pub fn fit_ols<T: Real>(d: &Dataset<T>) -> Result<FittedModel<T>> {
    let beta = least_squares(d.x(), d.y())?;
    let r = d.residuals(&beta);
    let sigma = (r.norm_squared() / T::from_count(d.n())).sqrt();
    plain_model(d, beta, sigma, 1, true)
}

pub const HUBER_C: f64 = 1.345;
pub const TUKEY_C: f64 = 4.685;

fn irls<T: Real, W: Fn(T) -> T>(
    d: &Dataset<T>,
    start: DVector<T>,
    weight: W,
    max_iter: usize,
    tol: T,
) -> Result<FittedModel<T>> {
    let mut beta = start;
    let mut scale = T::zero();
    for it in 1..=max_iter {
        let r = d.residuals(&beta);
        let abs: Vec<T> = r.iter().map(|v| v.abs()).collect();
        scale = median(&abs) * T::lit(MAD_CONSISTENCY);
        if !(scale > T::lit(SIGMA_FLOOR)) {
            return plain_model(d, beta, scale, it, true);
        }
        let w = r.map(|ri| weight(ri / scale));
        let next = weighted_least_squares(d.x(), d.y(), &w)?;
        let change = (&next - &beta).amax();
        let size = T::one() + beta.amax();
        beta = next;
        if change <= tol * size {
            return plain_model(d, beta, scale, it, true);
        }
    }
    plain_model(d, beta, scale, max_iter, false)
}

/// Huber M-estimator (`c = 1.345`) by iteratively reweighted least squares,
/// started at OLS, with scale `1.4826 * median |r|`.
pub fn fit_huber_pilot<T: Real>(d: &Dataset<T>) -> Result<FittedModel<T>> {
    let start = least_squares(d.x(), d.y())?;
    let c = T::lit(HUBER_C);
    irls(d, start, |u: T| if u.abs() <= c { T::one() } else { c / u.abs() }, 50, T::lit(1e-8))
}

/// Tukey bisquare M-estimator (`c = 4.685`) started at the Huber fit.
pub fn fit_tukey<T: Real>(d: &Dataset<T>) -> Result<FittedModel<T>> {
    let start = fit_huber_pilot(d)?.theta.beta;
    let c = T::lit(TUKEY_C);
    let w = |u: T| {
        if u.abs() >= c {
            T::zero()
        } else {
            let v = T::one() - (u / c) * (u / c);
            v * v
        }
    };
    irls(d, start, w, 50, T::lit(1e-8))
}
