//! Dataset container and core numeric primitives.
//!
//! An [`NCDataset`] holds one row per unit with the four special columns of a
//! negative control design (exposure `x`, outcome `y`, negative control
//! exposure `z`, negative control outcome `w`) plus any number of observed
//! covariate columns `v`. All downstream moment construction, estimation and
//! simulation code works off this container.
//!
//! The module also provides the shared regression primitives: sample
//! covariances (divisor `n`, not `n-1`), least squares via SVD with explicit
//! rank checking, and a logistic fit by iteratively reweighted least squares.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};
use thiserror::Error;

/// Errors produced by dataset construction, CSV ingestion and the numeric
/// primitives in this module.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("columns have unequal lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("non-finite value in column `{column}`, row {row}")]
    NonFinite { column: String, row: usize },
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("least squares solve failed: {0}")]
    SolveFailed(&'static str),
    #[error("labels must all be exactly 0 or 1")]
    NonBinaryLabels,
    #[error("labels are all equal; both classes are required")]
    SingleClassLabels,
    #[error("logistic fit did not converge within {0} iterations")]
    LogisticNoConvergence(usize),
    #[error("perfect separation detected: logistic coefficients diverged")]
    PerfectSeparation,
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("cannot parse column `{column}`, row {row} as a number")]
    ParseCell { column: String, row: usize },
    #[error("sqrt transform applied to negative value in column `{column}`, row {row}")]
    SqrtDomain { column: String, row: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Column-wise dataset for a double negative control analysis.
///
/// Invariants enforced at construction: all columns share the same length
/// `n >= 2` and every value is finite. Row order is preserved from the
/// source; for time series data it is the time order.
#[derive(Debug, Clone, PartialEq)]
pub struct NCDataset {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    w: DVector<f64>,
    v: DMatrix<f64>,
}

impl NCDataset {
    /// Builds a dataset from plain column vectors. `v` is a list of covariate
    /// columns (possibly empty).
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        w: Vec<f64>,
        v: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let n = x.len();
        for (name, col) in [("y", &y), ("z", &z), ("w", &w)] {
            if col.len() != n {
                let _ = name;
                return Err(DataError::LengthMismatch(n, col.len()));
            }
        }
        for col in &v {
            if col.len() != n {
                return Err(DataError::LengthMismatch(n, col.len()));
            }
        }
        if n < 2 {
            return Err(DataError::TooFewRows { min: 2, got: n });
        }
        let check = |name: &str, col: &[f64]| -> Result<(), DataError> {
            match col.iter().position(|u| !u.is_finite()) {
                Some(i) => Err(DataError::NonFinite {
                    column: name.to_string(),
                    row: i + 1,
                }),
                None => Ok(()),
            }
        };
        check("x", &x)?;
        check("y", &y)?;
        check("z", &z)?;
        check("w", &w)?;
        for (j, col) in v.iter().enumerate() {
            check(&format!("v{j}"), col)?;
        }
        let p = v.len();
        let vmat = DMatrix::from_fn(n, p, |r, c| v[c][r]);
        Ok(Self {
            x: DVector::from_vec(x),
            y: DVector::from_vec(y),
            z: DVector::from_vec(z),
            w: DVector::from_vec(w),
            v: vmat,
        })
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// True when the dataset has no rows (cannot happen for a constructed
    /// dataset; present for API completeness).
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Number of covariate columns.
    pub fn covariate_count(&self) -> usize {
        self.v.ncols()
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    /// Covariate matrix, one row per unit.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Design matrix `(1, v)` of the observed covariates with intercept.
    fn covariate_design(&self) -> DMatrix<f64> {
        let n = self.len();
        let p = self.covariate_count();
        DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { self.v[(r, c - 1)] })
    }

    /// Replaces `z` with its residual from a least squares fit of `z` on
    /// `(1, v)`. Useful when the instrument vector should be centered around
    /// the covariates before moment construction.
    pub fn with_residualized_z(&self) -> Result<Self, DataError> {
        let design = self.covariate_design();
        let fit = ols_fit(&design, &self.z)?;
        let mut out = self.clone();
        out.z = fit.residuals;
        Ok(out)
    }

    /// Partials the covariates out of all four special columns: each of
    /// `x, y, z, w` is replaced by its residual on `(1, v)` and the covariate
    /// block is dropped. With no covariates this just centers each column.
    pub fn partial_out_covariates(&self) -> Result<Self, DataError> {
        let design = self.covariate_design();
        let resid = |col: &DVector<f64>| -> Result<DVector<f64>, DataError> {
            Ok(ols_fit(&design, col)?.residuals)
        };
        Ok(Self {
            x: resid(&self.x)?,
            y: resid(&self.y)?,
            z: resid(&self.z)?,
            w: resid(&self.w)?,
            v: DMatrix::zeros(self.len(), 0),
        })
    }
}

/// Sample covariance with divisor `n`:
/// `(1/n) * sum_i (a_i - mean(a)) * (b_i - mean(b))`.
pub fn sample_cov(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64, DataError> {
    if a.len() != b.len() {
        return Err(DataError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(DataError::TooFewRows { min: 2, got: n });
    }
    let ma = a.mean();
    let mb = b.mean();
    let mut acc = 0.0;
    for i in 0..n {
        acc += (a[i] - ma) * (b[i] - mb);
    }
    Ok(acc / n as f64)
}

/// Variables of the negative control design, used to key covariance entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
    Z,
    W,
}

/// All pairwise sample covariances among `(x, y, z, w)`, divisor `n`.
///
/// The closed-form estimators are ratios of these entries, so the summary can
/// also be built directly from externally supplied values via
/// [`CovarianceSummary::from_parts`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSummary {
    pub sigma_xx: f64,
    pub sigma_xy: f64,
    pub sigma_xz: f64,
    pub sigma_xw: f64,
    pub sigma_yy: f64,
    pub sigma_zy: f64,
    pub sigma_yw: f64,
    pub sigma_zz: f64,
    pub sigma_zw: f64,
    pub sigma_ww: f64,
}

impl CovarianceSummary {
    pub fn from_dataset(data: &NCDataset) -> Result<Self, DataError> {
        let c = |a, b| sample_cov(a, b);
        Ok(Self {
            sigma_xx: c(data.x(), data.x())?,
            sigma_xy: c(data.x(), data.y())?,
            sigma_xz: c(data.x(), data.z())?,
            sigma_xw: c(data.x(), data.w())?,
            sigma_yy: c(data.y(), data.y())?,
            sigma_zy: c(data.z(), data.y())?,
            sigma_yw: c(data.y(), data.w())?,
            sigma_zz: c(data.z(), data.z())?,
            sigma_zw: c(data.z(), data.w())?,
            sigma_ww: c(data.w(), data.w())?,
        })
    }

    /// Builds a summary from the seven entries the closed-form estimators
    /// use; the remaining variances default to 1 and the y-w covariance to 0.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        sigma_xx: f64,
        sigma_xy: f64,
        sigma_xz: f64,
        sigma_xw: f64,
        sigma_zy: f64,
        sigma_zw: f64,
        sigma_zz: f64,
    ) -> Self {
        Self {
            sigma_xx,
            sigma_xy,
            sigma_xz,
            sigma_xw,
            sigma_yy: 1.0,
            sigma_zy,
            sigma_yw: 0.0,
            sigma_zz,
            sigma_zw,
            sigma_ww: 1.0,
        }
    }

    /// Covariance of an unordered variable pair; `pair(a, b) == pair(b, a)`.
    pub fn pair(&self, a: Var, b: Var) -> f64 {
        use Var::*;
        match (a, b) {
            (X, X) => self.sigma_xx,
            (Y, Y) => self.sigma_yy,
            (Z, Z) => self.sigma_zz,
            (W, W) => self.sigma_ww,
            (X, Y) | (Y, X) => self.sigma_xy,
            (X, Z) | (Z, X) => self.sigma_xz,
            (X, W) | (W, X) => self.sigma_xw,
            (Y, Z) | (Z, Y) => self.sigma_zy,
            (Y, W) | (W, Y) => self.sigma_yw,
            (Z, W) | (W, Z) => self.sigma_zw,
        }
    }
}

/// Least squares fit of `response` on the columns of `design`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Classical standard errors, `sqrt(diag(rss/(n-k) * (X'X)^-1))`.
    /// Zero-filled when `n == k` leaves no residual degrees of freedom.
    pub std_errors: DVector<f64>,
}

/// Ordinary least squares via SVD with an explicit rank check.
///
/// The rank tolerance is `1e-10` times the largest column norm of the design;
/// a deficient design is an error rather than a silently pinned solution.
pub fn ols_fit(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<OlsFit, DataError> {
    let (n, k) = design.shape();
    if response.len() != n {
        return Err(DataError::LengthMismatch(n, response.len()));
    }
    if k == 0 || n < k {
        return Err(DataError::RankDeficient {
            rank: n.min(k),
            cols: k.max(1),
        });
    }
    let max_col_norm = (0..k)
        .map(|j| design.column(j).norm())
        .fold(0.0_f64, f64::max);
    let eps = 1e-10 * max_col_norm.max(1e-300);
    let svd = SVD::new(design.clone(), true, true);
    let rank = svd.rank(eps);
    if rank < k {
        return Err(DataError::RankDeficient { rank, cols: k });
    }
    let coefficients = svd.solve(response, eps).map_err(DataError::SolveFailed)?;
    let fitted = design * &coefficients;
    let residuals = response - &fitted;
    let std_errors = if n > k {
        let sigma2 = residuals.norm_squared() / (n - k) as f64;
        let gram = design.tr_mul(design);
        let inv = gram
            .cholesky()
            .ok_or(DataError::RankDeficient { rank, cols: k })?
            .inverse();
        DVector::from_fn(k, |j, _| (sigma2 * inv[(j, j)]).max(0.0).sqrt())
    } else {
        DVector::zeros(k)
    };
    Ok(OlsFit {
        coefficients,
        fitted,
        residuals,
        std_errors,
    })
}

fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Labels must be exactly 0 or 1 with both classes present. Convergence is
/// declared when the score vector `X'(y - p)` has max absolute entry below
/// `1e-8`. Perfect separation is reported when the fitted probabilities pin
/// themselves to the labels (no finite optimum exists there) or when the
/// coefficient sup norm exceeds `1e6`.
pub fn logistic_fit(design: &DMatrix<f64>, labels: &DVector<f64>) -> Result<DVector<f64>, DataError> {
    let (n, k) = design.shape();
    if labels.len() != n {
        return Err(DataError::LengthMismatch(n, labels.len()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(DataError::NonBinaryLabels);
    }
    let ones = labels.iter().filter(|&&y| y == 1.0).count();
    if ones == 0 || ones == n {
        return Err(DataError::SingleClassLabels);
    }
    const MAX_ITER: usize = 100;
    let mut beta = DVector::zeros(k);
    for _ in 0..MAX_ITER {
        let eta = design * &beta;
        let p = eta.map(expit);
        if labels.iter().zip(p.iter()).all(|(y, p)| (y - p).abs() < 1e-6) {
            return Err(DataError::PerfectSeparation);
        }
        let score = design.tr_mul(&(labels - &p));
        if score.amax() < 1e-8 {
            return Ok(beta);
        }
        // X' diag(p(1-p)) X assembled without materializing the weight matrix.
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let wi = p[i] * (1.0 - p[i]);
            let row = design.row(i);
            for a in 0..k {
                for b in a..k {
                    hess[(a, b)] += wi * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        let step = hess
            .cholesky()
            .ok_or(DataError::RankDeficient { rank: 0, cols: k })?
            .solve(&score);
        beta += step;
        if beta.amax() > 1e6 {
            return Err(DataError::PerfectSeparation);
        }
    }
    Err(DataError::LogisticNoConvergence(MAX_ITER))
}

/// Per-column transform applied during CSV ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Sqrt,
}

/// Maps CSV header names onto the dataset roles.
#[derive(Debug, Clone, Default)]
pub struct ColumnMap {
    pub x: String,
    pub y: String,
    pub z: String,
    pub w: String,
    pub v: Vec<String>,
    /// Optional transform per source column name.
    pub transforms: HashMap<String, Transform>,
}

impl ColumnMap {
    /// Header names produced by [`write_csv`]: `x,y,z,w,v0,v1,...`.
    pub fn default_names(covariates: usize) -> Self {
        Self {
            x: "x".into(),
            y: "y".into(),
            z: "z".into(),
            w: "w".into(),
            v: (0..covariates).map(|j| format!("v{j}")).collect(),
            transforms: HashMap::new(),
        }
    }
}

/// Reads named columns from a headed CSV file, applying any transforms.
/// Row numbers in errors are 1-based data rows (the header is row 0).
pub(crate) fn read_named_columns(
    path: &Path,
    names: &[String],
    transforms: &HashMap<String, Transform>,
) -> Result<Vec<Vec<f64>>, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut indices = Vec::with_capacity(names.len());
    for name in names {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.clone()))?;
        indices.push(idx);
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        for (slot, (&idx, name)) in indices.iter().zip(names).enumerate() {
            let cell = record.get(idx).unwrap_or("");
            let parsed: f64 = cell.trim().parse().map_err(|_| DataError::ParseCell {
                column: name.clone(),
                row,
            })?;
            let value = match transforms.get(name) {
                Some(Transform::Sqrt) => {
                    if parsed < 0.0 {
                        return Err(DataError::SqrtDomain {
                            column: name.clone(),
                            row,
                        });
                    }
                    parsed.sqrt()
                }
                None => parsed,
            };
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    column: name.clone(),
                    row,
                });
            }
            columns[slot].push(value);
        }
    }
    Ok(columns)
}

/// Reads the named columns of a headed CSV file, in the order given,
/// applying any transforms keyed by source column name. This is the
/// ingestion path for data that does not form a full [`NCDataset`], such as
/// a raw time series.
pub fn read_columns(
    path: &Path,
    names: &[String],
    transforms: &HashMap<String, Transform>,
) -> Result<Vec<Vec<f64>>, DataError> {
    read_named_columns(path, names, transforms)
}

/// Reads an [`NCDataset`] from a headed CSV file according to `map`.
pub fn read_csv(path: &Path, map: &ColumnMap) -> Result<NCDataset, DataError> {
    let mut names = vec![map.x.clone(), map.y.clone(), map.z.clone(), map.w.clone()];
    names.extend(map.v.iter().cloned());
    let mut columns = read_named_columns(path, &names, &map.transforms)?;
    let v = columns.split_off(4);
    let w = columns.pop().unwrap();
    let z = columns.pop().unwrap();
    let y = columns.pop().unwrap();
    let x = columns.pop().unwrap();
    NCDataset::new(x, y, z, w, v)
}

/// Writes a dataset with headers `x,y,z,w,v0,...`. Values are printed in the
/// shortest representation that parses back to the identical float, so a
/// write/read cycle reproduces the dataset exactly.
pub fn write_csv(data: &NCDataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)?;
    let p = data.covariate_count();
    let mut header = vec!["x".to_string(), "y".into(), "z".into(), "w".into()];
    header.extend((0..p).map(|j| format!("v{j}")));
    writer.write_record(&header)?;
    let mut buf = String::new();
    for i in 0..data.len() {
        let mut record = Vec::with_capacity(4 + p);
        for value in [data.x[i], data.y[i], data.z[i], data.w[i]]
            .into_iter()
            .chain((0..p).map(|j| data.v[(i, j)]))
        {
            buf.clear();
            let _ = write!(buf, "{value}");
            record.push(buf.clone());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
