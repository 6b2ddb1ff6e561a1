//! Monte-Carlo study of prediction error and support recovery under
//! point-mass contamination of the errors.
//!
//! Replicate `r` draws from ChaCha8 stream `r + 1` of the master seed (stream
//! 0 generates the true coefficients), so reports do not depend on how the
//! replicates are scheduled across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{robust_standardize, unstandardize_model, Dataset};
use crate::error::{Error, Result};
use crate::scalar::fuzzy_ceil;
use crate::selection::{lambda_path, select_from_path, CpVariant, Criterion, SelectionConfig};
use crate::solver::{fit_huber_pilot, fit_ols, fit_tukey, FittedModel};

/// Fraction of failed replicates above which a study is abandoned.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Ols,
    Huber,
    Tukey,
    LassoCp,
    LassoAic,
    RCp(f64),
    RAic(f64),
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Ols => write!(f, "OLS"),
            Estimator::Huber => write!(f, "Huber"),
            Estimator::Tukey => write!(f, "Tukey"),
            Estimator::LassoCp => write!(f, "LASSO_Cp"),
            Estimator::LassoAic => write!(f, "LASSO_AIC"),
            Estimator::RCp(a) => write!(f, "RCp({a})"),
            Estimator::RAic(a) => write!(f, "RAIC({a})"),
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidInput(format!("unknown estimator '{s}'"));
        match s.to_ascii_uppercase().as_str() {
            "OLS" => return Ok(Estimator::Ols),
            "HUBER" => return Ok(Estimator::Huber),
            "TUKEY" => return Ok(Estimator::Tukey),
            "LASSO_CP" => return Ok(Estimator::LassoCp),
            "LASSO_AIC" => return Ok(Estimator::LassoAic),
            _ => {}
        }
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let alpha: f64 = inner.trim().parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        match s[..open].to_ascii_uppercase().as_str() {
            "RCP" => Ok(Estimator::RCp(alpha)),
            "RAIC" => Ok(Estimator::RAic(alpha)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Estimator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Estimator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contamination {
    #[default]
    None,
    /// `ceil(tau n)` errors replaced by draws from `N(mu_c_in_sigmas * sigma, 0.1^2)`.
    Point { tau: f64, mu_c_in_sigmas: f64 },
}

fn default_p() -> usize {
    25
}
fn default_rho() -> f64 {
    0.5
}
fn default_sparsity() -> f64 {
    0.6
}
fn default_test_size() -> usize {
    1000
}
fn default_grid() -> usize {
    50
}
fn default_estimators() -> Vec<Estimator> {
    vec![
        Estimator::Ols,
        Estimator::Huber,
        Estimator::LassoCp,
        Estimator::LassoAic,
        Estimator::RCp(0.2),
        Estimator::RAic(0.2),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    pub snr: f64,
    #[serde(default)]
    pub contamination: Contamination,
    pub replicates: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Lambda grid size for the penalized estimators.
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default)]
    pub rcp_variant: CpVariant,
}

impl SimulationConfig {
    pub fn new(n: usize, snr: f64, contamination: Contamination, replicates: usize, seed: u64) -> Self {
        Self {
            n,
            p: default_p(),
            rho: default_rho(),
            sparsity: default_sparsity(),
            snr,
            contamination,
            replicates,
            test_size: default_test_size(),
            seed,
            estimators: default_estimators(),
            grid_size: default_grid(),
            rcp_variant: CpVariant::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n < 2 || self.n <= self.p + 1 {
            return bad("n must exceed p + 1");
        }
        if !(self.rho.abs() < 1.0) {
            return bad("rho must lie in (-1, 1)");
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return bad("sparsity must lie in [0, 1)");
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return bad("snr must be positive");
        }
        if let Contamination::Point { tau, mu_c_in_sigmas } = self.contamination {
            if !(0.0..0.5).contains(&tau) || !mu_c_in_sigmas.is_finite() {
                return bad("tau must lie in [0, 0.5)");
            }
        }
        if self.replicates == 0 || self.test_size == 0 || self.grid_size == 0 {
            return bad("replicates, test_size and grid_size must be positive");
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested");
        }
        Ok(())
    }
}

/// Random stream `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// True coefficients: intercept 1, then `ceil((1 - sparsity) p)` nonzero
/// entries in the leading positions, the first half from `U(1, 2)` and the
/// rest from `U(-2, -1)`.
pub fn generate_beta<R: Rng>(p: usize, sparsity: f64, rng: &mut R) -> DVector<f64> {
    let k = fuzzy_ceil((1.0 - sparsity) * p as f64).min(p);
    let pos = k.div_ceil(2);
    let u = Uniform::new(1.0, 2.0).expect("valid range");
    let mut beta = DVector::zeros(p + 1);
    beta[0] = 1.0;
    for j in 0..k {
        let v: f64 = u.sample(rng);
        beta[j + 1] = if j < pos { v } else { -v };
    }
    beta
}

/// Rows of AR(1) Gaussian predictors with unit variances, intercept prepended.
pub fn generate_design<R: Rng>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        let mut prev = 0.0;
        for j in 1..=p {
            let z: f64 = StandardNormal.sample(rng);
            let v = if j == 1 { z } else { rho * prev + innov * z };
            x[(i, j)] = v;
            prev = v;
        }
    }
    x
}

/// `sqrt(beta' Sigma beta / snr)` over the non-intercept block, `Sigma_jk = rho^|j-k|`.
pub fn sigma_from_snr(beta: &DVector<f64>, rho: f64, snr: f64) -> f64 {
    let p = beta.len() - 1;
    let mut var = 0.0;
    for j in 1..=p {
        for k in 1..=p {
            var += beta[j] * beta[k] * rho.powi((j as i32 - k as i32).abs());
        }
    }
    (var / snr).sqrt()
}

/// Replaces a uniformly chosen `ceil(tau n)` subset by `N(mu_c, 0.1^2)` draws.
pub fn contaminate<R: Rng>(residuals: &DVector<f64>, tau: f64, mu_c: f64, rng: &mut R) -> DVector<f64> {
    let n = residuals.len();
    let m = fuzzy_ceil(tau * n as f64).min(n);
    let mut out = residuals.clone();
    if m == 0 {
        return out;
    }
    let dist = Normal::new(mu_c, 0.1).expect("valid normal");
    let mut idx = sample(rng, n, m).into_vec();
    idx.sort_unstable();
    for i in idx {
        out[i] = dist.sample(rng);
    }
    out
}

fn rpe_beta(beta_hat: &DVector<f64>, test_x: &DMatrix<f64>, beta_true: &DVector<f64>) -> f64 {
    let diff = test_x * (beta_hat - beta_true);
    diff.norm_squared() / test_x.nrows() as f64
}

/// Mean squared distance between fitted and true regression surfaces on `test`.
pub fn rpe(model: &FittedModel<f64>, test: &Dataset<f64>, beta_true: &DVector<f64>) -> f64 {
    rpe_beta(&model.theta.beta, test.x(), beta_true)
}

fn support_beta(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> (f64, f64) {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for j in 1..beta_true.len() {
        let truth = beta_true[j] != 0.0;
        let est = beta_hat[j] != 0.0;
        if truth {
            pos += 1;
            tp += usize::from(est);
        } else {
            neg += 1;
            tn += usize::from(!est);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    (ratio(tp, pos), ratio(tn, neg))
}

/// `(sensitivity, specificity)` of the fitted support over non-intercept coefficients.
pub fn support_metrics(model: &FittedModel<f64>, beta_true: &DVector<f64>) -> (f64, f64) {
    support_beta(&model.theta.beta, beta_true)
}

/// Mean absolute relative prediction error and the number of rows skipped
/// because `|y| < 1e-12`.
pub fn mape(model: &FittedModel<f64>, test: &Dataset<f64>) -> Result<(f64, usize)> {
    let pred = test.x() * &model.theta.beta;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (y, yh) in test.y().iter().zip(pred.iter()) {
        if y.abs() < 1e-12 {
            continue;
        }
        sum += ((y - yh) / y).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllResponsesZero);
    }
    Ok((sum / used as f64, test.n() - used))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    quantile(&s, 0.5)
}

/// Training data and clean test design of one replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub train: Dataset<f64>,
    pub test_x: DMatrix<f64>,
}

/// Study-level constants shared by all replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: DVector<f64>,
    pub sigma: f64,
}

pub fn study_truth(cfg: &SimulationConfig) -> Truth {
    let mut rng = stream_rng(cfg.seed, 0);
    let beta = generate_beta(cfg.p, cfg.sparsity, &mut rng);
    let sigma = sigma_from_snr(&beta, cfg.rho, cfg.snr);
    Truth { beta, sigma }
}

pub fn generate_replicate(cfg: &SimulationConfig, truth: &Truth, r: usize) -> Result<Replicate> {
    let mut rng = stream_rng(cfg.seed, r as u64 + 1);
    let x = generate_design(cfg.n, cfg.p, cfg.rho, &mut rng);
    let noise = DVector::from_fn(cfg.n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        truth.sigma * z
    });
    let noise = match cfg.contamination {
        Contamination::None => noise,
        Contamination::Point { tau, mu_c_in_sigmas } => contaminate(&noise, tau, mu_c_in_sigmas * truth.sigma, &mut rng),
    };
    let y = &x * &truth.beta + noise;
    let test_x = generate_design(cfg.test_size, cfg.p, cfg.rho, &mut rng);
    Ok(Replicate {
        train: Dataset::new(y, x)?,
        test_x,
    })
}

/// Selects lambda for each criterion on one shared standardized path at `alpha`.
pub fn fit_penalized(
    d: &Dataset<f64>,
    alpha: f64,
    criteria: &[Criterion],
    grid_size: usize,
    rcp_variant: CpVariant,
) -> Result<Vec<FittedModel<f64>>> {
    let (ds, st) = robust_standardize(d)?;
    let mut base = SelectionConfig::new(criteria[0]);
    base.n_grid = grid_size;
    base.cp_variant = rcp_variant;
    let path = lambda_path(&ds, alpha, &base, None)?;
    criteria
        .iter()
        .map(|&c| {
            let cfg = SelectionConfig { criterion: c, ..base.clone() };
            let sel = select_from_path(&path, &ds, &cfg)?;
            Ok(unstandardize_model(&sel.model, &st))
        })
        .collect()
}

/// Fits every estimator on one replicate, sharing lambda paths where possible.
pub fn fit_estimators(
    d: &Dataset<f64>,
    estimators: &[Estimator],
    grid_size: usize,
    rcp_variant: CpVariant,
) -> Result<Vec<FittedModel<f64>>> {
    let mut groups: BTreeMap<u64, Vec<(usize, Criterion)>> = BTreeMap::new();
    let mut out: Vec<Option<FittedModel<f64>>> = vec![None; estimators.len()];
    for (k, e) in estimators.iter().enumerate() {
        match *e {
            Estimator::Ols => out[k] = Some(fit_ols(d)?),
            Estimator::Huber => out[k] = Some(fit_huber_pilot(d)?),
            Estimator::Tukey => out[k] = Some(fit_tukey(d)?),
            Estimator::LassoCp => groups.entry(0f64.to_bits()).or_default().push((k, Criterion::ClassicalCp)),
            Estimator::LassoAic => groups.entry(0f64.to_bits()).or_default().push((k, Criterion::ClassicalAIC)),
            Estimator::RCp(a) => groups.entry(a.to_bits()).or_default().push((k, Criterion::RCp)),
            Estimator::RAic(a) => groups.entry(a.to_bits()).or_default().push((k, Criterion::RAIC)),
        }
    }
    for (bits, members) in groups {
        let criteria: Vec<Criterion> = members.iter().map(|m| m.1).collect();
        let models = fit_penalized(d, f64::from_bits(bits), &criteria, grid_size, rcp_variant)?;
        for ((k, _), m) in members.into_iter().zip(models) {
            out[k] = Some(m);
        }
    }
    Ok(out.into_iter().map(|m| m.expect("every estimator fitted")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub estimator: Estimator,
    pub replicate: usize,
    pub rpe: f64,
    pub rel_rpe: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub active_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub median_rel_rpe: f64,
    pub rpe_q1: f64,
    pub rpe_median: f64,
    pub rpe_q3: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub snr_definition: String,
    pub truth: Truth,
    pub summaries: Vec<EstimatorSummary>,
    pub replicates_used: usize,
    /// `(replicate, error name)` of excluded replicates.
    pub failures: Vec<(usize, String)>,
    pub records: Vec<ReplicateRecord>,
}

impl SimulationReport {
    pub fn summary(&self, e: Estimator) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == e)
    }
}

fn run_replicate(cfg: &SimulationConfig, truth: &Truth, estimators: &[Estimator], r: usize) -> Result<Vec<ReplicateRecord>> {
    let rep = generate_replicate(cfg, truth, r)?;
    let models = fit_estimators(&rep.train, estimators, cfg.grid_size, cfg.rcp_variant)?;
    let rpes: Vec<f64> = models.iter().map(|m| rpe_beta(&m.theta.beta, &rep.test_x, &truth.beta)).collect();
    let ols = rpes[0];
    Ok(estimators
        .iter()
        .zip(models.iter().zip(rpes))
        .map(|(&e, (m, rpe))| {
            let (sensitivity, specificity) = support_beta(&m.theta.beta, &truth.beta);
            ReplicateRecord {
                estimator: e,
                replicate: r,
                rpe,
                rel_rpe: rpe / ols,
                sensitivity,
                specificity,
                active_count: m.active.predictors().count(),
            }
        })
        .collect())
}

/// Runs all replicates in parallel and aggregates per estimator. OLS is
/// always fitted as the reference for relative prediction error.
pub fn run_study(cfg: &SimulationConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let truth = study_truth(cfg);
    let mut estimators = vec![Estimator::Ols];
    estimators.extend(cfg.estimators.iter().copied().filter(|e| *e != Estimator::Ols));
    info!(
        "study: n={} p={} snr={} replicates={} sigma={:.6}",
        cfg.n, cfg.p, cfg.snr, cfg.replicates, truth.sigma
    );
    let results: Vec<Result<Vec<ReplicateRecord>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, &truth, &estimators, r))
        .collect();

    let mut failures = Vec::new();
    let mut first_error = String::new();
    let mut records = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(recs) => records.extend(recs),
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                if failures.is_empty() {
                    first_error = e.to_string();
                }
                failures.push((r, e.name().to_string()));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 || failures.len() == cfg.replicates {
        return Err(Error::StudyFailed {
            failed: failures.len(),
            total: cfg.replicates,
            first: first_error,
        });
    }
    let used = cfg.replicates - failures.len();
    let requested: Vec<Estimator> = estimators
        .iter()
        .copied()
        .filter(|e| *e != Estimator::Ols || cfg.estimators.contains(e))
        .collect();
    let summaries = requested
        .iter()
        .map(|&e| {
            let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.estimator == e).collect();
            let rel: Vec<f64> = mine.iter().map(|r| r.rel_rpe).collect();
            let mut raw: Vec<f64> = mine.iter().map(|r| r.rpe).collect();
            raw.sort_by(|a, b| a.total_cmp(b));
            let m = mine.len() as f64;
            EstimatorSummary {
                estimator: e,
                median_rel_rpe: median_of(&rel),
                rpe_q1: quantile(&raw, 0.25),
                rpe_median: quantile(&raw, 0.5),
                rpe_q3: quantile(&raw, 0.75),
                sensitivity: mine.iter().map(|r| r.sensitivity).sum::<f64>() / m,
                specificity: mine.iter().map(|r| r.specificity).sum::<f64>() / m,
            }
        })
        .collect();
    records.retain(|r| requested.contains(&r.estimator));
    Ok(SimulationReport {
        config: cfg.clone(),
        snr_definition: "Var(x'beta) / sigma^2".to_string(),
        truth,
        summaries,
        replicates_used: used,
        failures,
        records,
    })
}
