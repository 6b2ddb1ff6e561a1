//! Robust penalized linear regression by minimum density power divergence.
//!
//! The estimator minimizes a penalized divergence between the empirical
//! distribution of the data and a normal linear model. A robustness
//! parameter `alpha` in `[0, 1]` trades efficiency for resistance to
//! outliers; `alpha = 0` recovers (penalized) maximum likelihood.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`). The
//! simulation harness works in `f64`.
//!
//! ```
//! use robreg_core::{fit_mdpde, Dataset64, FitConfig, PenaltySpec};
//! use nalgebra::{DMatrix, DVector};
//!
//! let pred = DMatrix::from_fn(30, 2, |i, j| ((i * (j + 3)) % 7) as f64 - 3.0);
//! let y = DVector::from_fn(30, |i, _| 1.0 + 0.5 * pred[(i, 0)] + 0.1 * ((i % 5) as f64 - 2.0));
//! let d = Dataset64::from_predictors(y, &pred).unwrap();
//! let m = fit_mdpde(&d, &FitConfig::new(0.2, PenaltySpec::l1(0.01))).unwrap();
//! assert!(m.converged);
//! ```

pub mod data;
pub mod dpd;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod penalty;
pub mod scalar;
pub mod selection;
pub mod simulation;
pub mod solver;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::{read_csv, robust_standardize, unstandardize_model, ActiveSet, CsvData, Dataset, Standardizer, Theta};
pub use dpd::{dpd_loss, eta_alpha, grad_beta, hessian_beta, sigma_equation, v_term, xi_alpha, DpdConfig, LossReport};
pub use error::{Error, Result};
pub use inference::{asymptotic_summary, influence_curve, influence_function, AsymptoticSummary, InfluenceAssessment};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use scalar::Real;
pub use selection::{
    adaptive_alpha, degrees_of_freedom, estimate_sigma_unbiased, lambda_path, robust_aic, robust_cp, s_matrix,
    select_lambda, AicForm, CpVariant, Criterion, CriterionValue, SelectionResult,
};
pub use solver::{
    fit_huber_pilot, fit_mdpde, fit_ols, fit_tukey, inner_pls_solve, kkt_residual, quadratic_surrogate, update_sigma,
    FitConfig, FittedModel, Init, InnerConfig,
};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Theta64 = Theta<f64>;
pub type Theta32 = Theta<f32>;
pub type FitConfig64 = FitConfig<f64>;
pub type FitConfig32 = FitConfig<f32>;
pub type FittedModel64 = FittedModel<f64>;
pub type FittedModel32 = FittedModel<f32>;
pub type PenaltySpec64 = PenaltySpec<f64>;
pub type PenaltySpec32 = PenaltySpec<f32>;
