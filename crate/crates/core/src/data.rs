//! Data containers and robust pre/post-processing.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{median, robust_scale, Real};
use crate::solver::FittedModel;

/// Response vector and design matrix with an explicit leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    y: DVector<T>,
    x: DMatrix<T>,
}

impl<T: Real> Dataset<T> {
    /// Builds a dataset from a full design whose column 0 must be all ones.
    pub fn new(y: DVector<T>, x: DMatrix<T>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::InvalidInput("need at least two observations".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("design needs an intercept column".into()));
        }
        if x.column(0).iter().any(|&v| v != T::one()) {
            return Err(Error::InvalidInput("column 0 of the design must be all ones".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.finite()) {
            return Err(Error::InvalidInput("non-finite entry in data".into()));
        }
        Ok(Self { y, x })
    }

    /// Builds a dataset from raw predictors (n x p); the intercept column is prepended.
    pub fn from_predictors(y: DVector<T>, predictors: &DMatrix<T>) -> Result<Self> {
        let n = predictors.nrows();
        let p = predictors.ncols();
        let x = DMatrix::from_fn(n, p + 1, |i, j| {
            if j == 0 {
                T::one()
            } else {
                predictors[(i, j - 1)]
            }
        });
        Self::new(y, x)
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of non-intercept predictors.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    /// Residuals `y - X beta`.
    pub fn residuals(&self, beta: &DVector<T>) -> DVector<T> {
        &self.y - &self.x * beta
    }

    /// Same rows, keeping only the design columns in `cols` (which must start with 0).
    pub fn with_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.first() != Some(&0) {
            return Err(Error::InvalidInput("column subset must keep the intercept".into()));
        }
        let x = crate::linalg::select_columns(&self.x, cols);
        Self::new(self.y.clone(), x)
    }

    /// Concatenation of the rows of `self` and `other`.
    pub fn stack(&self, other: &Self) -> Result<Self> {
        if self.x.ncols() != other.x.ncols() {
            return Err(Error::DimensionMismatch("column counts differ".into()));
        }
        let n = self.n() + other.n();
        let y = DVector::from_fn(n, |i, _| if i < self.n() { self.y[i] } else { other.y[i - self.n()] });
        let x = DMatrix::from_fn(n, self.x.ncols(), |i, j| {
            if i < self.n() {
                self.x[(i, j)]
            } else {
                other.x[(i - self.n(), j)]
            }
        });
        Self::new(y, x)
    }
}

/// Regression coefficients together with the error scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta<T: Real> {
    pub beta: DVector<T>,
    pub sigma: T,
}

impl<T: Real> Theta<T> {
    pub fn new(beta: DVector<T>, sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.finite() {
            return Err(Error::InvalidInput("sigma must be positive and finite".into()));
        }
        if beta.iter().any(|b| !b.finite()) {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(Self { beta, sigma })
    }
}

/// Sorted indices of the nonzero coefficients (intercept included as index 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    /// Validates and sorts; `dim` is the coefficient count `p + 1`.
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.last().is_some_and(|&j| j >= dim) {
            return Err(Error::InvalidInput("active index out of bounds".into()));
        }
        Ok(Self { indices })
    }

    /// `{ j : |beta_j| > threshold }`.
    pub fn from_beta<T: Real>(beta: &DVector<T>, threshold: T) -> Self {
        let indices = beta
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > threshold)
            .map(|(j, _)| j)
            .collect();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// Active non-intercept indices.
    pub fn predictors(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied().filter(|&j| j > 0)
    }
}

/// Constants of the robust centering/scaling applied before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T: Real> {
    pub centers: DVector<T>,
    pub scales: DVector<T>,
    pub y_center: T,
    pub y_scale: T,
}

impl<T: Real> Standardizer<T> {
    /// Centers zero, scales one: a no-op transform for `p` predictors.
    pub fn identity(p: usize) -> Self {
        Self {
            centers: DVector::zeros(p),
            scales: DVector::from_element(p, T::one()),
            y_center: T::zero(),
            y_scale: T::one(),
        }
    }

    /// Applies the stored transform to another dataset (e.g. a test set).
    pub fn apply(&self, d: &Dataset<T>) -> Result<Dataset<T>> {
        if d.p() != self.centers.len() {
            return Err(Error::DimensionMismatch("standardizer width differs from data".into()));
        }
        let mut x = d.x().clone();
        for j in 1..x.ncols() {
            let (c, s) = (self.centers[j - 1], self.scales[j - 1]);
            for v in x.column_mut(j).iter_mut() {
                *v = (*v - c) / s;
            }
        }
        let y = d.y().map(|v| (v - self.y_center) / self.y_scale);
        Dataset::new(y, x)
    }

    /// Inverts [`Standardizer::apply`].
    pub fn invert(&self, d: &Dataset<T>) -> Result<Dataset<T>> {
        let mut x = d.x().clone();
        for j in 1..x.ncols() {
            let (c, s) = (self.centers[j - 1], self.scales[j - 1]);
            for v in x.column_mut(j).iter_mut() {
                *v = *v * s + c;
            }
        }
        let y = d.y().map(|v| v * self.y_scale + self.y_center);
        Dataset::new(y, x)
    }

    /// Maps standardized-scale coefficients and scale back to raw units.
    pub fn unstandardize_theta(&self, theta: &Theta<T>) -> Theta<T> {
        let b = &theta.beta;
        let mut out = DVector::zeros(b.len());
        let mut shift = T::zero();
        for j in 1..b.len() {
            let bj = if b[j] == T::zero() {
                T::zero()
            } else {
                b[j] * self.y_scale / self.scales[j - 1]
            };
            out[j] = bj;
            shift += bj * self.centers[j - 1];
        }
        out[0] = self.y_center + self.y_scale * b[0] - shift;
        Theta {
            beta: out,
            sigma: theta.sigma * self.y_scale,
        }
    }
}

/// Centers every predictor and the response at its median and divides by
/// `1.4826 * MAD`. The intercept column is left untouched.
pub fn robust_standardize<T: Real>(d: &Dataset<T>) -> Result<(Dataset<T>, Standardizer<T>)> {
    let p = d.p();
    let mut centers = DVector::zeros(p);
    let mut scales = DVector::zeros(p);
    for j in 1..=p {
        let col: Vec<T> = d.x().column(j).iter().copied().collect();
        let s = robust_scale(&col);
        if !(s > T::zero()) {
            return Err(Error::DegenerateColumn(j));
        }
        centers[j - 1] = median(&col);
        scales[j - 1] = s;
    }
    let ys: Vec<T> = d.y().iter().copied().collect();
    let y_scale = robust_scale(&ys);
    if !(y_scale > T::zero()) {
        return Err(Error::DegenerateResponse);
    }
    let st = Standardizer {
        centers,
        scales,
        y_center: median(&ys),
        y_scale,
    };
    let ds = st.apply(d)?;
    Ok((ds, st))
}

/// Expresses a model fitted on standardized data in the original units.
/// Zero coefficients stay exactly zero, so the active set is unchanged.
pub fn unstandardize_model<T: Real>(m: &FittedModel<T>, s: &Standardizer<T>) -> FittedModel<T> {
    let mut out = m.clone();
    out.theta = s.unstandardize_theta(&m.theta);
    out
}

/// Data read from a CSV file together with the predictor names in column order.
#[derive(Debug, Clone)]
pub struct CsvData<T: Real> {
    pub dataset: Dataset<T>,
    pub response: String,
    pub predictors: Vec<String>,
}

/// Parses CSV with a header row. `response` names the response column; every
/// other column becomes a predictor in file order. Rows and columns in error
/// messages are 1-based, counting the header as row 1.
pub fn read_csv<T: Real, R: Read>(reader: R, response: &str) -> Result<CsvData<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            column: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let ycol = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::InvalidInput(format!("response column '{response}' not in header")))?;
    let predictors: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != ycol)
        .map(|(_, h)| h.clone())
        .collect();

    let mut ys = Vec::new();
    let mut rows: Vec<T> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: rec.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("non-numeric value '{field}' in column '{}'", headers[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("non-finite value '{field}'"),
                });
            }
            if j == ycol {
                ys.push(T::lit(v));
            } else {
                rows.push(T::lit(v));
            }
        }
    }
    let n = ys.len();
    let p = predictors.len();
    let preds = DMatrix::from_row_slice(n, p, &rows);
    let dataset = Dataset::from_predictors(DVector::from_vec(ys), &preds)?;
    Ok(CsvData {
        dataset,
        response: response.to_owned(),
        predictors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy() -> Dataset<f64> {
        let preds = DMatrix::from_row_slice(5, 2, &[1.0, 10.0, 2.0, 30.0, 3.0, 20.0, 4.0, 50.0, 5.0, 40.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 2.0, 5.0, 4.0]);
        Dataset::from_predictors(y, &preds).unwrap()
    }

    #[test]
    fn standardize_arithmetic_column() {
        let (ds, st) = robust_standardize(&toy()).unwrap();
        assert_eq!(st.centers[0], 3.0);
        assert_relative_eq!(st.scales[0], 1.4826, epsilon = 1e-15);
        let expect = [-1.349, -0.674, 0.0, 0.674, 1.349];
        for (v, e) in ds.x().column(1).iter().zip(expect) {
            assert!((v - e).abs() < 1e-3, "{v} vs {e}");
        }
        assert!(ds.x().column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_column_rejected() {
        let preds = DMatrix::from_row_slice(4, 2, &[1.0, 7.0, 2.0, 7.0, 3.0, 7.0, 4.0, 7.0]);
        let d = Dataset::from_predictors(DVector::from_vec(vec![1.0, 2.0, 4.0, 3.0]), &preds).unwrap();
        assert_eq!(robust_standardize(&d).unwrap_err(), Error::DegenerateColumn(2));
    }

    #[test]
    fn standardized_fixed_point_is_unchanged() {
        // median 0, MAD 1/1.4826
        let k: f64 = 1.0 / 1.4826;
        let col = [-2.0 * k, -k, 0.0, k, 2.0 * k];
        let preds = DMatrix::from_column_slice(5, 1, &col);
        let d = Dataset::from_predictors(DVector::from_row_slice(&col), &preds).unwrap();
        let (ds, _) = robust_standardize(&d).unwrap();
        for (a, b) in ds.x().column(1).iter().zip(col) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_rule() {
        let st = Standardizer {
            centers: DVector::from_vec(vec![0.0]),
            scales: DVector::from_vec(vec![4.0]),
            y_center: 0.0,
            y_scale: 2.0,
        };
        let th = Theta::new(DVector::from_vec(vec![0.0, 2.0]), 1.0).unwrap();
        let raw = st.unstandardize_theta(&th);
        assert_eq!(raw.beta[1], 1.0);
        assert_eq!(raw.sigma, 2.0);
    }

    #[test]
    fn identity_standardizer_is_noop() {
        let th = Theta::new(DVector::from_vec(vec![0.3, -2.0, 0.0]), 1.7).unwrap();
        assert_eq!(Standardizer::identity(2).unstandardize_theta(&th), th);
    }

    #[test]
    fn csv_parse_and_errors() {
        let text = "a,y,b\n1,2,3\n4,5,6\n7,8,10\n";
        let c: CsvData<f64> = read_csv(text.as_bytes(), "y").unwrap();
        assert_eq!(c.predictors, vec!["a", "b"]);
        assert_eq!(c.dataset.y()[2], 8.0);
        assert_eq!(c.dataset.x()[(1, 2)], 6.0);

        let bad = "a,y\n1,2\n3,oops\n";
        match read_csv::<f64, _>(bad.as_bytes(), "y").unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            read_csv::<f64, _>(text.as_bytes(), "nope").unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn active_set_from_beta() {
        let b = DVector::from_vec(vec![1.0, 0.0, -1e-11, 2.0]);
        let a = ActiveSet::from_beta(&b, 1e-10);
        assert_eq!(a.indices(), &[0, 3]);
        assert!(ActiveSet::new(vec![4], 4).is_err());
        assert_eq!(ActiveSet::new(vec![2, 0, 2], 4).unwrap().indices(), &[0, 2]);
    }
}
