//! Penalty families `P_lambda` with their first and second derivatives.
//!
//! The intercept (coefficient 0) is never penalized; every helper that takes
//! a full coefficient vector skips it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    None,
    L1,
    Scad,
}

impl std::str::FromStr for PenaltyFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "l1" | "lasso" => Ok(Self::L1),
            "scad" => Ok(Self::Scad),
            other => Err(Error::InvalidInput(format!("unknown penalty '{other}'"))),
        }
    }
}

pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec<T: Real> {
    pub family: PenaltyFamily,
    pub lambda: T,
    /// SCAD shape parameter, must exceed 2.
    pub scad_a: T,
}

fn soft_threshold<T: Real>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

impl<T: Real> PenaltySpec<T> {
    pub fn new(family: PenaltyFamily, lambda: T, scad_a: T) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.finite() {
            return Err(Error::InvalidInput("lambda must be finite and >= 0".into()));
        }
        if family == PenaltyFamily::Scad && !(scad_a > T::lit(2.0)) {
            return Err(Error::InvalidInput("SCAD shape parameter must exceed 2".into()));
        }
        Ok(Self { family, lambda, scad_a })
    }

    pub fn none() -> Self {
        Self {
            family: PenaltyFamily::None,
            lambda: T::zero(),
            scad_a: T::lit(DEFAULT_SCAD_A),
        }
    }

    pub fn l1(lambda: T) -> Self {
        Self::new(PenaltyFamily::L1, lambda, T::lit(DEFAULT_SCAD_A)).expect("valid L1 penalty")
    }

    pub fn scad(lambda: T, a: T) -> Self {
        Self::new(PenaltyFamily::Scad, lambda, a).expect("valid SCAD penalty")
    }

    /// Same family and shape, different `lambda`.
    pub fn with_lambda(&self, lambda: T) -> Self {
        Self { lambda, ..*self }
    }

    /// True when the penalty contributes nothing.
    pub fn is_inactive(&self) -> bool {
        self.family == PenaltyFamily::None || self.lambda == T::zero()
    }

    /// `P_lambda(t)` for `t >= 0`.
    pub fn value(&self, t: T) -> T {
        let t = t.abs();
        let l = self.lambda;
        match self.family {
            PenaltyFamily::None => T::zero(),
            PenaltyFamily::L1 => {
                if t == T::zero() {
                    T::zero()
                } else {
                    l * t
                }
            }
            PenaltyFamily::Scad => {
                let a = self.scad_a;
                if t <= l {
                    l * t
                } else if t <= a * l {
                    (T::lit(2.0) * a * l * t - t * t - l * l) / (T::lit(2.0) * (a - T::one()))
                } else {
                    (a + T::one()) * l * l * T::lit(0.5)
                }
            }
        }
    }

    /// `P'_lambda(t)` for `t > 0`.
    pub fn deriv(&self, t: T) -> Result<T> {
        if !(t > T::zero()) {
            return Err(Error::NonpositiveArgument(t.to_f64_lossy()));
        }
        Ok(self.deriv_unchecked(t))
    }

    fn deriv_unchecked(&self, t: T) -> T {
        let l = self.lambda;
        match self.family {
            PenaltyFamily::None => T::zero(),
            PenaltyFamily::L1 => l,
            PenaltyFamily::Scad => {
                let a = self.scad_a;
                if t <= l {
                    l
                } else if t < a * l {
                    (a * l - t) / (a - T::one())
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `P''_lambda(t)` for `t > 0`; zero wherever the penalty is linear or flat.
    pub fn second_deriv(&self, t: T) -> Result<T> {
        if !(t > T::zero()) {
            return Err(Error::NonpositiveArgument(t.to_f64_lossy()));
        }
        Ok(self.second_deriv_unchecked(t))
    }

    fn second_deriv_unchecked(&self, t: T) -> T {
        match self.family {
            PenaltyFamily::Scad if t > self.lambda && t < self.scad_a * self.lambda => {
                -T::one() / (self.scad_a - T::one())
            }
            _ => T::zero(),
        }
    }

    /// `sum_{j>=1} P(|beta_j|)`.
    pub fn total(&self, beta: &DVector<T>) -> T {
        beta.iter().skip(1).fold(T::zero(), |acc, &b| acc + self.value(b))
    }

    /// Vector of `sign(beta_j) P'(|beta_j|)` for nonzero penalized entries; zero elsewhere.
    pub fn signed_deriv_vector(&self, beta: &DVector<T>) -> DVector<T> {
        DVector::from_fn(beta.len(), |j, _| {
            let b = beta[j];
            if j == 0 || b == T::zero() {
                T::zero()
            } else {
                b.signum() * self.deriv_unchecked(b.abs())
            }
        })
    }

    /// Diagonal matrix of `P''(|beta_j|)`, zero for the intercept and for zero entries.
    pub fn second_deriv_matrix(&self, beta: &DVector<T>) -> DMatrix<T> {
        let diag = DVector::from_fn(beta.len(), |j, _| {
            let b = beta[j];
            if j == 0 || b == T::zero() {
                T::zero()
            } else {
                self.second_deriv_unchecked(b.abs())
            }
        });
        DMatrix::from_diagonal(&diag)
    }

    /// Minimizer over `b` of `0.5 * curv * b^2 - lin * b + P(|b|)` (requires `curv > 0`).
    pub fn coordinate_minimizer(&self, curv: T, lin: T) -> T {
        let l = self.lambda;
        match self.family {
            PenaltyFamily::None => lin / curv,
            PenaltyFamily::L1 => soft_threshold(lin, l) / curv,
            PenaltyFamily::Scad => {
                if l == T::zero() {
                    return lin / curv;
                }
                let a = self.scad_a;
                let sgn = if lin < T::zero() { -T::one() } else { T::one() };
                let obj = |b: T| T::lit(0.5) * curv * b * b - lin * b + self.value(b);
                let clamp_mag = |b: T, lo: T, hi: T| {
                    let m = b.abs();
                    let m = if m < lo { lo } else if m > hi { hi } else { m };
                    sgn * m
                };
                let mut cands = vec![T::zero()];
                cands.push(clamp_mag(soft_threshold(lin, l) / curv, T::zero(), l));
                let denom = curv - T::one() / (a - T::one());
                if denom > T::zero() {
                    let mid = soft_threshold(lin, a * l / (a - T::one())) / denom;
                    cands.push(clamp_mag(mid, l, a * l));
                } else {
                    cands.push(sgn * l);
                    cands.push(sgn * a * l);
                }
                let big = T::max_value().unwrap_or(T::lit(f64::MAX));
                cands.push(clamp_mag(lin / curv, a * l, big));
                let mut best = T::zero();
                let mut best_obj = obj(best);
                for c in cands {
                    let o = obj(c);
                    if o < best_obj || (o == best_obj && c.abs() < best.abs()) {
                        best = c;
                        best_obj = o;
                    }
                }
                best
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn values() {
        assert_eq!(PenaltySpec::l1(0.5).value(2.0), 1.0);
        for p in [PenaltySpec::l1(0.5), PenaltySpec::scad(1.0, 3.7), PenaltySpec::none()] {
            assert_eq!(p.value(0.0), 0.0);
        }
        assert_relative_eq!(PenaltySpec::scad(1.0, 3.7).value(10.0), 2.35, epsilon = 1e-14);
    }

    #[test]
    fn derivatives() {
        let l1 = PenaltySpec::l1(0.5);
        assert_eq!(l1.deriv(2.0).unwrap(), 0.5);
        assert_eq!(l1.second_deriv(2.0).unwrap(), 0.0);
        let s = PenaltySpec::<f64>::scad(1.0, 3.7);
        assert_relative_eq!(s.deriv(2.0).unwrap(), 1.7 / 2.7, epsilon = 1e-15);
        assert_relative_eq!(s.second_deriv(2.0).unwrap(), -1.0 / 2.7, epsilon = 1e-15);
        assert!((s.deriv(2.0).unwrap() - 0.6296).abs() < 1e-4);
        assert!((s.second_deriv(2.0).unwrap() + 0.3704).abs() < 1e-4);
        assert_eq!(s.deriv(0.0).unwrap_err(), Error::NonpositiveArgument(0.0));
        assert!(l1.second_deriv(-1.0).is_err());
        let none = PenaltySpec::<f64>::none();
        assert_eq!((none.deriv(1.0).unwrap(), none.second_deriv(1.0).unwrap()), (0.0, 0.0));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for p in [PenaltySpec::<f64>::l1(0.7), PenaltySpec::scad(1.0, 3.7)] {
            for t in [0.3, 1.5, 5.0] {
                let fd = (p.value(t + h) - p.value(t - h)) / (2.0 * h);
                assert!((fd - p.deriv(t).unwrap()).abs() < 1e-6, "{p:?} t={t}");
            }
        }
    }

    #[test]
    fn second_derivative_matrices() {
        let beta = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        assert_eq!(PenaltySpec::l1(0.3).second_deriv_matrix(&beta), DMatrix::zeros(3, 3));
        assert_eq!(PenaltySpec::<f64>::none().second_deriv_matrix(&beta), DMatrix::zeros(3, 3));
        let m = PenaltySpec::scad(1.0, 3.7).second_deriv_matrix(&beta);
        assert_eq!(m[(0, 0)], 0.0);
        assert_relative_eq!(m[(1, 1)], -1.0 / 2.7, epsilon = 1e-15);
        assert_eq!(m[(2, 2)], 0.0);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn intercept_not_penalized() {
        let beta = DVector::from_vec(vec![100.0, 1.0]);
        assert_eq!(PenaltySpec::l1(2.0).total(&beta), 2.0);
        assert_eq!(PenaltySpec::l1(2.0).signed_deriv_vector(&beta)[0], 0.0);
    }

    #[test]
    fn scad_coordinate_minimizer_matches_grid_search() {
        let p = PenaltySpec::scad(0.8, 3.7);
        for &curv in &[0.2, 0.5, 1.0, 3.0] {
            for k in -60..=60 {
                let lin = k as f64 * 0.1;
                let b = p.coordinate_minimizer(curv, lin);
                let obj = |b: f64| 0.5 * curv * b * b - lin * b + p.value(b);
                let mut best = f64::INFINITY;
                for g in -200_000..=200_000 {
                    let bb = g as f64 * 1e-4;
                    best = best.min(obj(bb));
                }
                assert!(obj(b) <= best + 1e-8, "curv {curv} lin {lin}: {} vs {best}", obj(b));
            }
        }
    }

    #[test]
    fn l1_coordinate_minimizer_is_soft_threshold() {
        let p = PenaltySpec::l1(1.0);
        assert_eq!(p.coordinate_minimizer(2.0, 0.5), 0.0);
        assert_eq!(p.coordinate_minimizer(2.0, 3.0), 1.0);
        assert_eq!(p.coordinate_minimizer(2.0, -3.0), -1.0);
    }
}
