//! Model selection along a lambda grid with robust Cp and robust AIC, and
//! data-driven choice of `alpha`.

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Theta};
use crate::dpd::{density_of_residual, density_power, eta_alpha, grad_from_residuals, xi_alpha, DpdConfig};
use crate::error::{Error, Result};
use crate::linalg::{condition_number_sym, select_columns, select_entries, symmetric_inverse_sqrt};
use crate::penalty::{PenaltyFamily, PenaltySpec, DEFAULT_SCAD_A};
use crate::scalar::Real;
use crate::solver::{fit_mdpde, fit_ols, FitConfig, FittedModel, Init};

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "rcp")]
    RCp,
    #[serde(rename = "raic")]
    RAIC,
    #[serde(rename = "cp")]
    ClassicalCp,
    #[serde(rename = "aic")]
    ClassicalAIC,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rcp" => Ok(Self::RCp),
            "raic" => Ok(Self::RAIC),
            "cp" => Ok(Self::ClassicalCp),
            "aic" => Ok(Self::ClassicalAIC),
            other => Err(Error::InvalidInput(format!("unknown criterion '{other}'"))),
        }
    }
}

/// How the residual sum of squares is replaced in robust Cp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpVariant {
    /// `n sigma^2`, matching the squared scale in the denominator.
    #[default]
    Squared,
    /// `n sigma`.
    Literal,
}

impl std::str::FromStr for CpVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Self::Squared),
            "literal" => Ok(Self::Literal),
            other => Err(Error::InvalidInput(format!("unknown Cp variant '{other}'"))),
        }
    }
}

/// Weight of the penalty curvature inside the robust AIC trace term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AicForm {
    /// `Psi + P'' / (1 + alpha)`.
    #[default]
    Derivation,
    /// `Psi + P''`.
    Displayed,
}

impl std::str::FromStr for AicForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derivation" => Ok(Self::Derivation),
            "displayed" => Ok(Self::Displayed),
            other => Err(Error::InvalidInput(format!("unknown AIC form '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue<T: Real> {
    pub kind: Criterion,
    pub value: T,
    pub df: T,
    pub lambda: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig<T: Real> {
    pub criterion: Criterion,
    pub family: PenaltyFamily,
    pub scad_a: T,
    pub n_grid: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub min_ratio: T,
    pub cp_variant: CpVariant,
    pub aic_form: AicForm,
    pub max_outer_iters: usize,
    pub tol: T,
}

impl<T: Real> SelectionConfig<T> {
    pub fn new(criterion: Criterion) -> Self {
        Self {
            criterion,
            family: PenaltyFamily::L1,
            scad_a: T::lit(DEFAULT_SCAD_A),
            n_grid: 50,
            min_ratio: T::lit(1e-4),
            cp_variant: CpVariant::Squared,
            aic_form: AicForm::Derivation,
            max_outer_iters: 100,
            tol: T::lit(1e-7),
        }
    }

    fn fit_config(&self, alpha: T, penalty: PenaltySpec<T>, init: Init<T>) -> FitConfig<T> {
        let mut cfg = FitConfig::new(alpha, penalty).with_init(init);
        cfg.max_outer_iters = self.max_outer_iters;
        cfg.tol = self.tol;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult<T: Real> {
    /// Lambda values in descending order.
    pub grid: Vec<T>,
    /// Criterion values for the grid points whose fit and evaluation succeeded.
    pub values: Vec<CriterionValue<T>>,
    /// Per-grid-point fitted models (`None` where the fit failed).
    #[serde(skip)]
    pub models: Vec<Option<FittedModel<T>>>,
    pub chosen_lambda: T,
    pub model: FittedModel<T>,
    pub alpha: T,
    pub criterion: Criterion,
    /// Scale of the unpenalized reference fit used by Cp-type criteria.
    pub sigma_u: Option<T>,
    /// `(lambda, error name)` for every grid point that failed.
    pub failures: Vec<(T, String)>,
}

/// Active indices of a model with the intercept always included.
fn active_indices<T: Real>(m: &FittedModel<T>) -> Vec<usize> {
    let mut idx: Vec<usize> = m.active.indices().to_vec();
    if idx.first() != Some(&0) {
        idx.insert(0, 0);
    }
    idx
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    DpdConfig::new(alpha).map(|_| ())
}

/// `S = (xi_alpha / n) X_A^T X_A + P''(beta_A) / (1 + alpha)` on the active set.
pub fn s_matrix<T: Real>(model: &FittedModel<T>, d: &Dataset<T>, alpha: T) -> Result<DMatrix<T>> {
    check_alpha(alpha)?;
    let idx = active_indices(model);
    let xa = select_columns(d.x(), &idx);
    let n = T::from_count(d.n());
    let xi = xi_alpha(alpha, model.theta.sigma);
    let ba = select_entries(&model.theta.beta, &idx);
    let mut ppp = model.penalty.second_deriv_matrix(&ba);
    if idx[0] == 0 {
        ppp[(0, 0)] = T::zero();
    }
    let s = xa.tr_mul(&xa) * (xi / n) + ppp / (T::one() + alpha);
    let cond = condition_number_sym(&s);
    if !(cond <= T::lit(MAX_CONDITION)) {
        return Err(Error::SingularS(cond.to_f64_lossy()));
    }
    Ok(s)
}

/// Effective number of parameters `(xi_alpha / n) tr(S^-1 X_A^T X_A)`.
pub fn degrees_of_freedom<T: Real>(model: &FittedModel<T>, d: &Dataset<T>, alpha: T) -> Result<T> {
    let s = s_matrix(model, d, alpha)?;
    let idx = active_indices(model);
    let xa = select_columns(d.x(), &idx);
    let gram = xa.tr_mul(&xa);
    let lu = s.lu();
    let sol = lu.solve(&gram).ok_or(Error::SingularS(f64::INFINITY))?;
    let xi = xi_alpha(alpha, model.theta.sigma);
    Ok(sol.trace() * xi / T::from_count(d.n()))
}

/// Robust Cp: `n sigma^2 / sigma_u^2 - n + 2 df` (or `n sigma` in the literal variant).
pub fn robust_cp<T: Real>(
    model: &FittedModel<T>,
    d: &Dataset<T>,
    alpha: T,
    sigma_u: T,
    variant: CpVariant,
) -> Result<CriterionValue<T>> {
    let df = degrees_of_freedom(model, d, alpha)?;
    let n = T::from_count(d.n());
    let s = model.theta.sigma;
    let rss = match variant {
        CpVariant::Squared => n * s * s,
        CpVariant::Literal => n * s,
    };
    Ok(CriterionValue {
        kind: Criterion::RCp,
        value: rss / (sigma_u * sigma_u) - n + T::lit(2.0) * df,
        df,
        lambda: model.penalty.lambda,
    })
}

/// Scale of the unpenalized fit at `alpha`, inflated by `sqrt(n / (n - |A|))`.
pub fn estimate_sigma_unbiased<T: Real>(d: &Dataset<T>, alpha: T) -> Result<T> {
    let m = fit_mdpde(d, &FitConfig::new(alpha, PenaltySpec::none()))?;
    sigma_unbiased_from(&m, d.n())
}

fn sigma_unbiased_from<T: Real>(m: &FittedModel<T>, n: usize) -> Result<T> {
    let k = active_indices(m).len();
    if n <= k {
        return Err(Error::InvalidInput("need more observations than active coefficients".into()));
    }
    Ok(m.theta.sigma * (T::from_count(n) / T::from_count(n - k)).sqrt())
}

fn block_diag<T: Real>(a: &DMatrix<T>, last: T) -> DMatrix<T> {
    let k = a.nrows();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    m.view_mut((0, 0), (k, k)).copy_from(a);
    m[(k, k)] = last;
    m
}

/// Ingredients of the robust AIC penalty term on the active set.
pub(crate) struct RaicParts<T: Real> {
    pub sigma_star: DMatrix<T>,
    pub psi: DMatrix<T>,
    pub curvature: DMatrix<T>,
    pub bias: DVector<T>,
}

pub(crate) fn raic_parts<T: Real>(model: &FittedModel<T>, d: &Dataset<T>, alpha: T) -> Result<RaicParts<T>> {
    let idx = active_indices(model);
    let xa = select_columns(d.x(), &idx);
    let n = T::from_count(d.n());
    let sigma = model.theta.sigma;
    let sig_a = xa.tr_mul(&xa) / n;
    let sig_inv = sig_a.clone().try_inverse().ok_or(Error::SingularGram)?;
    let two = alpha * T::lit(2.0);
    let (xa_, x2a) = (xi_alpha(alpha, sigma), xi_alpha(two, sigma));
    let (ea, e2a) = (eta_alpha(alpha, sigma), eta_alpha(two, sigma));
    let sigma2_var = (e2a - alpha * alpha * xa_ * xa_ / T::lit(4.0)) / (ea * ea);
    let sigma_star = block_diag(&(sig_inv * (x2a / (xa_ * xa_))), sigma2_var);
    let psi = block_diag(&(&sig_a * xa_), ea);

    let ba = select_entries(&model.theta.beta, &idx);
    let mut pprime = model.penalty.signed_deriv_vector(&ba);
    let mut ppp = model.penalty.second_deriv_matrix(&ba);
    if idx[0] == 0 {
        pprime[0] = T::zero();
        ppp[(0, 0)] = T::zero();
    }
    let root = symmetric_inverse_sqrt(&sig_a).ok_or(Error::SingularGram)?;
    let b = root * pprime * (x2a.sqrt() / xa_);
    let mut bias = DVector::zeros(idx.len() + 1);
    bias.rows_mut(0, idx.len()).copy_from(&b);
    Ok(RaicParts {
        sigma_star,
        psi,
        curvature: block_diag(&ppp, T::zero()),
        bias,
    })
}

/// Robust AIC. For `alpha > 0` the fit term is `-((1 + alpha) / alpha) sum f_i^alpha`;
/// for `alpha = 0` it is the negative log-likelihood.
pub fn robust_aic<T: Real>(
    model: &FittedModel<T>,
    d: &Dataset<T>,
    alpha: T,
    form: AicForm,
) -> Result<CriterionValue<T>> {
    check_alpha(alpha)?;
    let r = d.residuals(&model.theta.beta);
    let sigma = model.theta.sigma;
    let fit = if alpha == T::zero() {
        -r.iter().fold(T::zero(), |acc, &ri| acc + density_of_residual(ri, sigma).ln())
    } else {
        let s = r.iter().fold(T::zero(), |acc, &ri| acc + density_power(ri, sigma, alpha));
        -(T::one() + alpha) / alpha * s
    };
    let parts = raic_parts(model, d, alpha)?;
    let weight = match form {
        AicForm::Derivation => T::one() / (T::one() + alpha),
        AicForm::Displayed => T::one(),
    };
    let m = &parts.psi + &parts.curvature * weight;
    let cov = &parts.sigma_star + &parts.bias * parts.bias.transpose();
    let trace = (cov * m).trace();
    Ok(CriterionValue {
        kind: Criterion::RAIC,
        value: fit + trace,
        df: trace,
        lambda: model.penalty.lambda,
    })
}

/// Mallows-type Cp: `RSS_A / sigma_ols^2 - n + 2 |A|`, with the unbiased OLS variance.
pub fn classical_cp<T: Real>(model: &FittedModel<T>, d: &Dataset<T>, sigma_ols: T) -> CriterionValue<T> {
    let rss = d.residuals(&model.theta.beta).norm_squared();
    let n = T::from_count(d.n());
    let k = T::from_count(active_indices(model).len());
    CriterionValue {
        kind: Criterion::ClassicalCp,
        value: rss / (sigma_ols * sigma_ols) - n + T::lit(2.0) * k,
        df: k,
        lambda: model.penalty.lambda,
    }
}

/// `-loglik + |A| + 1`, on the same half-scale as the robust AIC at `alpha = 0`.
pub fn classical_aic<T: Real>(model: &FittedModel<T>, d: &Dataset<T>) -> CriterionValue<T> {
    let r = d.residuals(&model.theta.beta);
    let nll = -r
        .iter()
        .fold(T::zero(), |acc, &ri| acc + density_of_residual(ri, model.theta.sigma).ln());
    let k = T::from_count(active_indices(model).len());
    CriterionValue {
        kind: Criterion::ClassicalAIC,
        value: nll + k + T::one(),
        df: k + T::one(),
        lambda: model.penalty.lambda,
    }
}

/// Penalized fits along a descending log-spaced lambda grid.
#[derive(Debug, Clone)]
pub struct LambdaPath<T: Real> {
    pub alpha: T,
    pub grid: Vec<T>,
    pub fits: Vec<Result<FittedModel<T>>>,
}

/// `max_{j>=1} |dV/dbeta_j|` at the intercept-only fit, together with that fit.
fn lambda_max<T: Real>(d: &Dataset<T>, alpha: T, cfg: &SelectionConfig<T>) -> Result<(T, Theta<T>)> {
    let d0 = d.with_columns(&[0])?;
    let m0 = fit_mdpde(&d0, &cfg.fit_config(alpha, PenaltySpec::none(), Init::HuberPilot))?;
    let mut beta = DVector::zeros(d.x().ncols());
    beta[0] = m0.theta.beta[0];
    let r = d.residuals(&beta);
    let g = grad_from_residuals(d.x(), &r, m0.theta.sigma, alpha);
    let lmax = g.iter().skip(1).fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
    let lmax = if lmax > T::zero() { lmax } else { T::lit(1e-8) };
    Ok((lmax, Theta::new(beta, m0.theta.sigma)?))
}

/// Log-spaced grid from `lmax` down to `min_ratio * lmax`.
pub fn log_grid<T: Real>(lmax: T, min_ratio: T, n_grid: usize) -> Vec<T> {
    if n_grid == 1 {
        return vec![lmax];
    }
    let step = min_ratio.ln() / T::from_count(n_grid - 1);
    (0..n_grid).map(|k| lmax * (step * T::from_count(k)).exp()).collect()
}

/// Warm-started fits along the grid, or along `grid` when supplied.
pub fn lambda_path<T: Real>(
    d: &Dataset<T>,
    alpha: T,
    cfg: &SelectionConfig<T>,
    grid: Option<&[T]>,
) -> Result<LambdaPath<T>> {
    check_alpha(alpha)?;
    if cfg.n_grid == 0 && grid.is_none() {
        return Err(Error::InvalidInput("grid must contain at least one value".into()));
    }
    let (lmax, start) = lambda_max(d, alpha, cfg)?;
    let grid = match grid {
        Some(g) => {
            let mut g = g.to_vec();
            g.sort_by(|a, b| b.partial_cmp(a).expect("finite lambda"));
            g
        }
        None => log_grid(lmax, cfg.min_ratio, cfg.n_grid),
    };
    debug!("lambda_max = {:e}", lmax.to_f64_lossy());
    let mut warm = start;
    let mut fits = Vec::with_capacity(grid.len());
    for &lam in &grid {
        let pen = PenaltySpec::new(cfg.family, lam, cfg.scad_a)?;
        let fit = fit_mdpde(d, &cfg.fit_config(alpha, pen, Init::Provided(warm.clone())));
        if let Ok(m) = &fit {
            warm = m.theta.clone();
        }
        fits.push(fit);
    }
    Ok(LambdaPath { alpha, grid, fits })
}

/// Reference scales needed by a criterion.
#[derive(Debug, Clone, Copy)]
struct Reference<T: Real> {
    sigma_u: Option<T>,
}

fn reference<T: Real>(d: &Dataset<T>, alpha: T, cfg: &SelectionConfig<T>) -> Result<Reference<T>> {
    let sigma_u = match cfg.criterion {
        Criterion::RCp => {
            let m = fit_mdpde(d, &cfg.fit_config(alpha, PenaltySpec::none(), Init::HuberPilot))?;
            Some(sigma_unbiased_from(&m, d.n())?)
        }
        Criterion::ClassicalCp => {
            let m = fit_ols(d)?;
            Some(sigma_unbiased_from(&m, d.n())?)
        }
        _ => None,
    };
    Ok(Reference { sigma_u })
}

fn evaluate<T: Real>(
    m: &FittedModel<T>,
    d: &Dataset<T>,
    alpha: T,
    cfg: &SelectionConfig<T>,
    refs: &Reference<T>,
) -> Result<CriterionValue<T>> {
    match cfg.criterion {
        Criterion::RCp => robust_cp(m, d, alpha, refs.sigma_u.expect("reference scale"), cfg.cp_variant),
        Criterion::RAIC => robust_aic(m, d, alpha, cfg.aic_form),
        Criterion::ClassicalCp => Ok(classical_cp(m, d, refs.sigma_u.expect("reference scale"))),
        Criterion::ClassicalAIC => Ok(classical_aic(m, d)),
    }
}

/// Scores every fit on a path with `cfg.criterion` and picks the minimizer
/// (ties go to the larger lambda).
pub fn select_from_path<T: Real>(
    path: &LambdaPath<T>,
    d: &Dataset<T>,
    cfg: &SelectionConfig<T>,
) -> Result<SelectionResult<T>> {
    let alpha = path.alpha;
    let refs = reference(d, alpha, cfg)?;
    let mut values = Vec::new();
    let mut failures = Vec::new();
    let mut models = Vec::with_capacity(path.grid.len());
    let mut best: Option<(usize, T)> = None;
    let mut last_err = None;
    for (k, (&lam, fit)) in path.grid.iter().zip(&path.fits).enumerate() {
        models.push(fit.as_ref().ok().cloned());
        let scored = fit.as_ref().map_err(Clone::clone).and_then(|m| evaluate(m, d, alpha, cfg, &refs));
        match scored {
            Ok(v) if v.value.finite() => {
                if best.is_none_or(|(_, b)| v.value < b) {
                    best = Some((k, v.value));
                }
                values.push(v);
            }
            Ok(v) => {
                failures.push((lam, "NonFiniteCriterion".to_string()));
                last_err = Some(format!("criterion is not finite at lambda {:e}", v.lambda.to_f64_lossy()));
            }
            Err(e) => {
                failures.push((lam, e.name().to_string()));
                last_err = Some(e.to_string());
            }
        }
    }
    let (k, _) = best.ok_or_else(|| Error::AllFailed(last_err.unwrap_or_default()))?;
    let model = path.fits[k].as_ref().expect("chosen fit succeeded").clone();
    info!(
        "chose lambda {:e} with {} active coefficients",
        path.grid[k].to_f64_lossy(),
        model.active.len()
    );
    Ok(SelectionResult {
        grid: path.grid.clone(),
        values,
        models,
        chosen_lambda: path.grid[k],
        model,
        alpha,
        criterion: cfg.criterion,
        sigma_u: refs.sigma_u,
        failures,
    })
}

/// Fits the lambda path at `alpha` and selects by `cfg.criterion`.
pub fn select_lambda<T: Real>(d: &Dataset<T>, alpha: T, cfg: &SelectionConfig<T>) -> Result<SelectionResult<T>> {
    let path = lambda_path(d, alpha, cfg, None)?;
    select_from_path(&path, d, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord<T: Real> {
    pub alpha: T,
    pub mse: Option<T>,
    pub bias_term: Option<T>,
    pub variance_term: Option<T>,
    pub lambda: Option<T>,
    pub active_count: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveAlpha<T: Real> {
    pub alpha_star: T,
    pub records: Vec<AlphaRecord<T>>,
    pub selection: SelectionResult<T>,
}

/// `alpha = 0, 0.0125, ..., 1`.
pub fn default_alpha_grid<T: Real>() -> Vec<T> {
    (0..=80).map(|k| T::from_count(k) / T::lit(80.0)).collect()
}

/// Variance part of the estimated MSE: `(xi_2a / xi_a^2) tr((X_A^T X_A)^-1)`.
pub fn mse_variance_term<T: Real>(model: &FittedModel<T>, d: &Dataset<T>, alpha: T) -> Result<T> {
    let idx = active_indices(model);
    let xa = select_columns(d.x(), &idx);
    let inv = xa.tr_mul(&xa).try_inverse().ok_or(Error::SingularGram)?;
    let sigma = model.theta.sigma;
    let xa_ = xi_alpha(alpha, sigma);
    Ok(xi_alpha(alpha * T::lit(2.0), sigma) / (xa_ * xa_) * inv.trace())
}

/// Squared distance to the pilot on the active set.
pub fn mse_bias_term<T: Real>(model: &FittedModel<T>, pilot: &FittedModel<T>) -> T {
    let idx = active_indices(model);
    let diff = select_entries(&model.theta.beta, &idx) - select_entries(&pilot.theta.beta, &idx);
    diff.norm_squared()
}

/// Chooses `alpha` on `alpha_grid` by minimizing the estimated MSE against a
/// pilot fit, with lambda selected by `cfg.criterion` at every grid value.
pub fn adaptive_alpha<T: Real>(
    d: &Dataset<T>,
    pilot: &FittedModel<T>,
    alpha_grid: &[T],
    cfg: &SelectionConfig<T>,
) -> Result<AdaptiveAlpha<T>> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidInput("alpha grid is empty".into()));
    }
    let mut records = Vec::with_capacity(alpha_grid.len());
    let mut best: Option<(T, T, SelectionResult<T>)> = None;
    let mut last_err = String::new();
    for &alpha in alpha_grid {
        let scored = select_lambda(d, alpha, cfg).and_then(|sel| {
            let var = mse_variance_term(&sel.model, d, alpha)?;
            let bias = mse_bias_term(&sel.model, pilot);
            Ok((sel, bias, var))
        });
        match scored {
            Ok((sel, bias, var)) => {
                let mse = bias + var;
                records.push(AlphaRecord {
                    alpha,
                    mse: Some(mse),
                    bias_term: Some(bias),
                    variance_term: Some(var),
                    lambda: Some(sel.chosen_lambda),
                    active_count: Some(sel.model.active.len()),
                    error: None,
                });
                if best.as_ref().is_none_or(|(_, b, _)| mse < *b) {
                    best = Some((alpha, mse, sel));
                }
            }
            Err(e) => {
                last_err = e.to_string();
                records.push(AlphaRecord {
                    alpha,
                    mse: None,
                    bias_term: None,
                    variance_term: None,
                    lambda: None,
                    active_count: None,
                    error: Some(e.name().to_string()),
                });
            }
        }
    }
    let (alpha_star, _, selection) = best.ok_or(Error::AllFailed(last_err))?;
    Ok(AdaptiveAlpha {
        alpha_star,
        records,
        selection,
    })
}
