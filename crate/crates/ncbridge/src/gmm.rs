//! Generalized method of moments over stacked bridge moments.
//!
//! The estimator minimizes the quadratic form
//!
//! ```text
//! Q_n(theta) = m_n(theta)' Omega m_n(theta),   m_n = (1/n) sum_i h(d_i; theta)
//! ```
//!
//! with `Omega` a symmetric positive definite weight (identity by default).
//! Linear-in-parameters bridges make `m_n` affine in `theta`, so just- and
//! over-identified systems are solved exactly; anything else goes through a
//! BFGS quasi-Newton descent on `Q_n`.
//!
//! Inference uses the sandwich
//!
//! ```text
//! var(theta_hat) = S1 S0 S1' / n,
//! S1 = (M' Omega M)^-1 M' Omega,   S0 = (1/n) sum_i h_i h_i',
//! M  = (1/n) sum_i d h_i / d theta'
//! ```
//!
//! and, for serially dependent data, a Newey-West long-run replacement for
//! `S0` with Bartlett weights `1 - i/(1 + b_n)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::bridge::{moment_function, BridgeError, MomentSpec};
use crate::data::{ols_fit, DataError, NCDataset};

#[derive(Debug, Error)]
pub enum GmmError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("singular moment Jacobian: weak instruments or collinear features")]
    SingularMomentJacobian,
    #[error("weight matrix must be {expected}x{expected}, got {rows}x{cols}")]
    WeightDimension {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("weight matrix is not symmetric")]
    WeightNotSymmetric,
    #[error("weight matrix is not positive definite")]
    WeightNotPositiveDefinite,
    #[error("HAC bandwidth {bandwidth} must be smaller than the number of rows {rows}")]
    BandwidthTooLarge { bandwidth: usize, rows: usize },
    #[error("initial theta has length {got}, expected {expected}")]
    InitDimension { expected: usize, got: usize },
}

/// Bandwidth rule for the Newey-West long-run covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HacConfig {
    /// Use exactly this many lags.
    Fixed(usize),
    /// `floor(scale * n^(1/3))` lags; the conventional scale is 1.3.
    Automatic { scale: f64 },
}

impl Default for HacConfig {
    fn default() -> Self {
        HacConfig::Automatic { scale: 1.3 }
    }
}

impl HacConfig {
    /// Bandwidth for a sample of `rows` rows; must come out below `rows`.
    pub fn resolve(&self, rows: usize) -> Result<usize, GmmError> {
        let b = match *self {
            HacConfig::Fixed(b) => b,
            HacConfig::Automatic { scale } => {
                (scale * (rows as f64).powf(1.0 / 3.0)).floor() as usize
            }
        };
        if b >= rows {
            return Err(GmmError::BandwidthTooLarge {
                bandwidth: b,
                rows,
            });
        }
        Ok(b)
    }
}

/// How the minimizer was (or should be) chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    /// Exact solve for linear bridges, BFGS otherwise.
    Auto,
    /// Force the affine solve; errors if the bridge is not linear.
    LinearExact,
    /// Force the quasi-Newton descent.
    QuasiNewton,
}

/// Solver that produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    LinearExact,
    QuasiNewton,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::LinearExact => "linear_exact",
            SolverKind::QuasiNewton => "quasi_newton",
        }
    }
}

/// Options for [`gmm_fit_with`].
#[derive(Debug, Clone, Default)]
pub struct GmmOptions {
    /// Weight matrix `Omega`; identity when absent.
    pub weight: Option<DMatrix<f64>>,
    /// Starting point for the quasi-Newton path. Defaults to a least squares
    /// seed for `gamma` (when bridge features exist) and zeros elsewhere.
    pub init: Option<DVector<f64>>,
    pub solver: Option<SolverChoice>,
    /// When set, the fit also carries a HAC sandwich variance.
    pub hac: Option<HacConfig>,
}

/// A fitted GMM specification.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub theta_hat: DVector<f64>,
    /// Objective value at the solution (zero up to rounding when
    /// just-identified).
    pub objective: f64,
    /// Sandwich variance of `theta_hat` assuming independent rows.
    pub var_iid: DMatrix<f64>,
    /// Newey-West sandwich variance, present when a HAC config was given.
    pub var_hac: Option<DMatrix<f64>>,
    /// Resolved HAC bandwidth, when applicable.
    pub hac_bandwidth: Option<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub solver: SolverKind,
}

impl GmmFit {
    /// The variance used for reporting: HAC when available, else iid.
    pub fn variance(&self) -> &DMatrix<f64> {
        self.var_hac.as_ref().unwrap_or(&self.var_iid)
    }

    /// Standard error of the `idx`-th parameter under [`Self::variance`].
    pub fn std_error(&self, idx: usize) -> f64 {
        self.variance()[(idx, idx)].max(0.0).sqrt()
    }

    pub fn std_errors(&self) -> DVector<f64> {
        let v = self.variance();
        DVector::from_fn(v.nrows(), |i, _| v[(i, i)].max(0.0).sqrt())
    }
}

fn validate_weight(weight: Option<&DMatrix<f64>>, dim: usize) -> Result<DMatrix<f64>, GmmError> {
    match weight {
        None => Ok(DMatrix::identity(dim, dim)),
        Some(w) => {
            if w.nrows() != dim || w.ncols() != dim {
                return Err(GmmError::WeightDimension {
                    expected: dim,
                    rows: w.nrows(),
                    cols: w.ncols(),
                });
            }
            let scale = w.amax().max(1e-300);
            if (w - w.transpose()).amax() > 1e-10 * scale {
                return Err(GmmError::WeightNotSymmetric);
            }
            if w.clone().cholesky().is_none() {
                return Err(GmmError::WeightNotPositiveDefinite);
            }
            Ok(w.clone())
        }
    }
}

fn mean_moment_vector(h: &DMatrix<f64>) -> DVector<f64> {
    let n = h.nrows() as f64;
    DVector::from_iterator(h.ncols(), h.column_iter().map(|c| c.sum() / n))
}

/// GMM objective `m_n(theta)' Omega m_n(theta)`, clamped at zero against
/// rounding. `Omega` defaults to the identity.
pub fn gmm_objective(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
    weight: Option<&DMatrix<f64>>,
) -> Result<f64, GmmError> {
    let omega = validate_weight(weight, spec.moment_dim())?;
    let h = moment_function(spec, data, theta)?;
    let m = mean_moment_vector(&h);
    Ok((m.transpose() * &omega * &m)[(0, 0)].max(0.0))
}

/// Affine representation `m_n(theta) = c + J theta` for linear bridges.
fn linear_blocks(spec: &MomentSpec, data: &NCDataset) -> Option<(DMatrix<f64>, DVector<f64>)> {
    if !spec.bridge.is_linear() {
        return None;
    }
    let n = data.len();
    let dg = spec.bridge.dim();
    let dq = spec.instruments.dim();
    let m = spec.moment_dim();
    let t = spec.theta_dim();
    let v = data.v();
    let nf = n as f64;
    let mut jac = DMatrix::zeros(m, t);
    let mut c = DVector::zeros(m);
    let mut psi_bar = DVector::zeros(dg);
    for i in 0..n {
        let (x, y, z, w) = (data.x()[i], data.y()[i], data.z()[i], data.w()[i]);
        let phi = spec.bridge.features(x, w, v, i)?;
        let q = spec.instruments.features(x, z, v, i);
        for a in 0..dq {
            c[a] += q[a] * y / nf;
            for b in 0..dg {
                jac[(a, b)] -= q[a] * phi[b] / nf;
            }
        }
        if let Some((x1, x0)) = spec.contrast {
            let phi1 = spec.bridge.features(x1, w, v, i)?;
            let phi0 = spec.bridge.features(x0, w, v, i)?;
            psi_bar += (phi1 - phi0) / nf;
        }
    }
    if spec.contrast.is_some() {
        for b in 0..dg {
            jac[(m - 1, b)] = -psi_bar[b];
        }
        jac[(m - 1, t - 1)] = 1.0;
    }
    Some((jac, c))
}

/// Jacobian `M = d m_n / d theta'` (`moment_dim x theta_dim`).
///
/// Linear bridges get the exact expression `-(1/n) sum q_i phi_i'` plus the
/// contrast row; other bridges are differentiated by central differences with
/// step `1e-6 * max(1, |theta_j|)`.
pub fn moment_jacobian(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, GmmError> {
    spec.validate(data, theta)?;
    if let Some((jac, _)) = linear_blocks(spec, data) {
        return Ok(jac);
    }
    fd_jacobian(spec, data, theta)
}

pub(crate) fn fd_jacobian(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, GmmError> {
    let m = spec.moment_dim();
    let t = spec.theta_dim();
    let mut jac = DMatrix::zeros(m, t);
    for j in 0..t {
        let step = 1e-6 * theta[j].abs().max(1.0);
        let mut hi = theta.clone();
        let mut lo = theta.clone();
        hi[j] += step;
        lo[j] -= step;
        let mh = mean_moment_vector(&moment_function(spec, data, &hi)?);
        let ml = mean_moment_vector(&moment_function(spec, data, &lo)?);
        let col = (mh - ml) / (2.0 * step);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

fn symmetrize_clean(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    m += t;
    m /= 2.0;
    let scale = m.amax();
    for i in 0..m.nrows() {
        // Rounding can leave a variance a hair below zero; pin it.
        if m[(i, i)] < 0.0 && m[(i, i)] > -1e-12 * scale.max(1.0) {
            m[(i, i)] = 0.0;
        }
    }
    m
}

/// Sandwich variance of `theta_hat` under independent rows.
pub fn sandwich_variance(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
    weight: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>, GmmError> {
    let h = moment_function(spec, data, theta)?;
    let s0 = h.tr_mul(&h) / data.len() as f64;
    sandwich_from_pieces(spec, data, theta, weight, &s0)
}

/// Sandwich variance with a Newey-West long-run middle, for serially
/// dependent rows (row order is the time order).
pub fn hac_variance(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
    weight: Option<&DMatrix<f64>>,
    config: &HacConfig,
) -> Result<DMatrix<f64>, GmmError> {
    let h = moment_function(spec, data, theta)?;
    let bandwidth = config.resolve(data.len())?;
    let s0 = newey_west_long_run(&h, bandwidth)?;
    sandwich_from_pieces(spec, data, theta, weight, &s0)
}

fn sandwich_from_pieces(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
    weight: Option<&DMatrix<f64>>,
    s0: &DMatrix<f64>,
) -> Result<DMatrix<f64>, GmmError> {
    let omega = validate_weight(weight, spec.moment_dim())?;
    let m = moment_jacobian(spec, data, theta)?;
    let mtw = m.tr_mul(&omega);
    let a = &mtw * &m;
    let a_inv = a
        .cholesky()
        .ok_or(GmmError::SingularMomentJacobian)?
        .inverse();
    let s1 = a_inv * mtw;
    let var = &s1 * s0 * s1.transpose() / data.len() as f64;
    Ok(symmetrize_clean(var))
}

/// Newey-West long-run covariance of a score matrix (one row per time point):
///
/// ```text
/// S = S_0 + sum_{i=1}^{b} (1 - i/(1+b)) (S_i + S_i'),
/// S_i = (1/n) sum_{j=i+1}^{n} h_j h_{j-i}'
/// ```
///
/// All terms are uncentered and normalized by `n`.
pub fn newey_west_long_run(scores: &DMatrix<f64>, bandwidth: usize) -> Result<DMatrix<f64>, GmmError> {
    let n = scores.nrows();
    if bandwidth >= n {
        return Err(GmmError::BandwidthTooLarge {
            bandwidth,
            rows: n,
        });
    }
    let nf = n as f64;
    let mut total = scores.tr_mul(scores) / nf;
    for lag in 1..=bandwidth {
        let mut s_lag = DMatrix::zeros(scores.ncols(), scores.ncols());
        for j in lag..n {
            let now = scores.row(j);
            let before = scores.row(j - lag);
            for a in 0..scores.ncols() {
                for b in 0..scores.ncols() {
                    s_lag[(a, b)] += now[a] * before[b];
                }
            }
        }
        s_lag /= nf;
        let weight = 1.0 - lag as f64 / (1.0 + bandwidth as f64);
        let s_lag_t = s_lag.transpose();
        total += (s_lag + s_lag_t) * weight;
    }
    Ok(total)
}

/// Fits the spec with identity weight and default options.
pub fn gmm_fit(spec: &MomentSpec, data: &NCDataset) -> Result<GmmFit, GmmError> {
    gmm_fit_with(spec, data, &GmmOptions::default())
}

/// Fits the spec, choosing the exact affine solve for linear bridges and
/// BFGS otherwise (unless overridden in `options`).
pub fn gmm_fit_with(
    spec: &MomentSpec,
    data: &NCDataset,
    options: &GmmOptions,
) -> Result<GmmFit, GmmError> {
    let t = spec.theta_dim();
    spec.validate(data, &DVector::zeros(t))?;
    let omega = validate_weight(options.weight.as_ref(), spec.moment_dim())?;
    if let Some(init) = &options.init {
        if init.len() != t {
            return Err(GmmError::InitDimension {
                expected: t,
                got: init.len(),
            });
        }
    }
    let choice = options.solver.unwrap_or(SolverChoice::Auto);
    let linear = linear_blocks(spec, data);
    let use_exact = match choice {
        SolverChoice::LinearExact => {
            if linear.is_none() {
                return Err(GmmError::SingularMomentJacobian);
            }
            true
        }
        SolverChoice::QuasiNewton => false,
        SolverChoice::Auto => linear.is_some(),
    };

    let (theta_hat, converged, iterations, solver) = if use_exact {
        let (jac, c) = linear.expect("exact path requires linear blocks");
        let theta = solve_affine(&jac, &c, &omega)?;
        (theta, true, 0, SolverKind::LinearExact)
    } else {
        let init = match &options.init {
            Some(v) => v.clone(),
            None => default_init(spec, data),
        };
        let (theta, converged, iters) = bfgs_minimize(spec, data, &omega, init)?;
        (theta, converged, iters, SolverKind::QuasiNewton)
    };

    let objective = gmm_objective(spec, data, &theta_hat, Some(&omega))?;
    let var_iid = sandwich_variance(spec, data, &theta_hat, Some(&omega))?;
    let (var_hac, hac_bandwidth) = match &options.hac {
        Some(cfg) => {
            let bw = cfg.resolve(data.len())?;
            let var = hac_variance(spec, data, &theta_hat, Some(&omega), cfg)?;
            (Some(var), Some(bw))
        }
        None => (None, None),
    };
    Ok(GmmFit {
        theta_hat,
        objective,
        var_iid,
        var_hac,
        hac_bandwidth,
        converged,
        iterations,
        solver,
    })
}

/// Minimizer of `(c + J theta)' Omega (c + J theta)`; exact root when
/// just-identified.
fn solve_affine(
    jac: &DMatrix<f64>,
    c: &DVector<f64>,
    omega: &DMatrix<f64>,
) -> Result<DVector<f64>, GmmError> {
    let (m, t) = jac.shape();
    let theta = if m == t {
        let lu = jac.clone().lu();
        lu.solve(&(-c)).ok_or(GmmError::SingularMomentJacobian)?
    } else {
        let jtw = jac.tr_mul(omega);
        let a = &jtw * jac;
        let rhs = -(&jtw * c);
        a.cholesky()
            .ok_or(GmmError::SingularMomentJacobian)?
            .solve(&rhs)
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(GmmError::SingularMomentJacobian);
    }
    // Guard against a numerically successful solve of an ill-posed system.
    let resid = (jac * &theta + c).amax();
    let scale = c.amax().max(1.0);
    if m == t && resid > 1e-6 * scale {
        return Err(GmmError::SingularMomentJacobian);
    }
    Ok(theta)
}

fn default_init(spec: &MomentSpec, data: &NCDataset) -> DVector<f64> {
    let t = spec.theta_dim();
    let dg = spec.bridge.dim();
    let mut init = DVector::zeros(t);
    let v = data.v();
    // Seed gamma with a least squares fit of y on the bridge features when
    // the bridge is parametric; leave zeros otherwise.
    let n = data.len();
    let mut phi = DMatrix::zeros(n, dg);
    let mut have_features = true;
    for i in 0..n {
        match spec.bridge.features(data.x()[i], data.w()[i], v, i) {
            Some(row) => phi.set_row(i, &row.transpose()),
            None => {
                have_features = false;
                break;
            }
        }
    }
    if have_features {
        if let Ok(fit) = ols_fit(&phi, data.y()) {
            for j in 0..dg {
                init[j] = fit.coefficients[j];
            }
        }
    }
    init
}

fn bfgs_minimize(
    spec: &MomentSpec,
    data: &NCDataset,
    omega: &DMatrix<f64>,
    init: DVector<f64>,
) -> Result<(DVector<f64>, bool, usize), GmmError> {
    const MAX_ITER: usize = 200;
    const GRAD_TOL: f64 = 1e-8;
    const ARMIJO: f64 = 1e-4;

    let t = init.len();
    let objective = |theta: &DVector<f64>| -> Result<f64, GmmError> {
        gmm_objective(spec, data, theta, Some(omega))
    };
    let gradient = |theta: &DVector<f64>| -> Result<DVector<f64>, GmmError> {
        let h = moment_function(spec, data, theta)?;
        let m = mean_moment_vector(&h);
        let jac = if spec.bridge.is_linear() {
            moment_jacobian(spec, data, theta)?
        } else {
            fd_jacobian(spec, data, theta)?
        };
        Ok(jac.tr_mul(omega) * m * 2.0)
    };

    let mut theta = init;
    let mut f = objective(&theta)?;
    let mut g = gradient(&theta)?;
    let mut hinv = DMatrix::identity(t, t);
    let mut iterations = 0;

    for _ in 0..MAX_ITER {
        if g.amax() < GRAD_TOL {
            return Ok((theta, true, iterations));
        }
        iterations += 1;
        let mut dir = -(&hinv * &g);
        let mut slope = dir.dot(&g);
        if slope >= 0.0 {
            // Curvature estimate went bad; restart from steepest descent.
            hinv = DMatrix::identity(t, t);
            dir = -g.clone();
            slope = dir.dot(&g);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &theta + &dir * alpha;
            let fc = objective(&cand)?;
            if fc <= f + ARMIJO * alpha * slope {
                accepted = Some((cand, fc));
                break;
            }
            alpha /= 2.0;
        }
        let Some((next, f_next)) = accepted else {
            // Line search stalled; report whatever tolerance we reached.
            return Ok((theta, g.amax() < GRAD_TOL, iterations));
        };
        let g_next = gradient(&next)?;
        let s = &next - &theta;
        let yv = &g_next - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let identity = DMatrix::identity(t, t);
            let left = &identity - &s * yv.transpose() * rho;
            let right = &identity - &yv * s.transpose() * rho;
            hinv = &left * hinv * right + &s * s.transpose() * rho;
        }
        theta = next;
        f = f_next;
        g = g_next;
    }
    let converged = g.amax() < GRAD_TOL;
    Ok((theta, converged, iterations))
}
