//! Point estimators of a linear exposure effect under a double negative
//! control design, with sandwich-based standard errors.
//!
//! The closed forms are ratios of sample covariances. Writing `s_ab` for the
//! divisor-`n` sample covariance of `a` and `b`,
//!
//! ```text
//! iv:  s_zy / s_xz
//! nc:  (s_xw * s_zy - s_xy * s_zw) / (s_xw * s_xz - s_xx * s_zw)
//! ```
//!
//! and the negative control estimator is algebraically identical to a
//! modified two-stage least squares that instruments the negative control
//! outcome `w` with `z` ([`nc_tsls`]). Observed covariates are partialled out
//! of all four special columns first, which reproduces the same estimators
//! with covariate terms included in the moment system.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::bridge::{BridgeError, BridgeModel, InstrumentMap, MomentSpec, Term};
use crate::data::{logistic_fit, ols_fit, CovarianceSummary, DataError, NCDataset};
use crate::gmm::{gmm_fit, newey_west_long_run, GmmError, HacConfig};
use crate::inference::p_value;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("identification failure: {0}")]
    IdentificationFailure(&'static str),
    #[error("exposure must be binary 0/1 for inverse probability weighting")]
    NonBinaryExposure,
    #[error("control index {index} out of range; dataset has {available} covariate column(s)")]
    ControlIndex { index: usize, available: usize },
    #[error("sample too small: need more than {needed} rows, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("bootstrap failed: only {succeeded} of {attempted} resamples produced a fit")]
    BootstrapFailed { succeeded: usize, attempted: usize },
}

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Iv,
    Nc,
    NcTsls,
    Ols,
    Ipw,
    FirstStage,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Iv => "iv",
            Method::Nc => "nc",
            Method::NcTsls => "nc_tsls",
            Method::Ols => "ols",
            Method::Ipw => "ipw",
            Method::FirstStage => "first_stage",
        }
    }
}

/// A scalar estimate with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateWithSE {
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
    /// Set when the fit is usable but suspect (weak first stage, skipped
    /// bootstrap, ...).
    pub warning: Option<String>,
}

/// Joint regression test for residual confounding on a lagged design:
/// `w ~ x + z + 1 + controls` with Newey-West standard errors. Under no
/// unmeasured confounding both `alpha1` (on `x`) and `alpha2` (on `z`)
/// are zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfoundingTestResult {
    pub alpha1: f64,
    pub se_alpha1: f64,
    pub p_alpha1: f64,
    pub alpha2: f64,
    pub se_alpha2: f64,
    pub p_alpha2: f64,
    pub hac_bandwidth: usize,
    pub rows: usize,
}

fn guard_denominator(value: f64, scale: f64, what: &'static str) -> Result<(), EstimatorError> {
    if value.abs() <= 1e-12 * scale.max(1e-300) {
        return Err(EstimatorError::IdentificationFailure(what));
    }
    Ok(())
}

/// IV ratio from covariance entries: `s_zy / s_xz`.
pub fn iv_from_covariances(c: &CovarianceSummary) -> Result<f64, EstimatorError> {
    let scale = (c.sigma_xx * c.sigma_zz).max(0.0).sqrt();
    guard_denominator(
        c.sigma_xz,
        scale,
        "exposure and negative control exposure are uncorrelated",
    )?;
    Ok(c.sigma_zy / c.sigma_xz)
}

/// Negative control ratio from covariance entries.
pub fn nc_from_covariances(c: &CovarianceSummary) -> Result<f64, EstimatorError> {
    let den = c.sigma_xw * c.sigma_xz - c.sigma_xx * c.sigma_zw;
    let scale = c.sigma_xx * (c.sigma_ww * c.sigma_zz).max(0.0).sqrt();
    guard_denominator(
        den,
        scale,
        "degenerate first stage: w carries no independent signal from z",
    )?;
    Ok((c.sigma_xw * c.sigma_zy - c.sigma_xy * c.sigma_zw) / den)
}

/// Coefficient of `z` in the least squares fit of `w` on `(1, x, z)`,
/// written in covariance form.
pub fn first_stage_slope_from_covariances(c: &CovarianceSummary) -> Result<f64, EstimatorError> {
    let den = c.sigma_xz * c.sigma_xz - c.sigma_xx * c.sigma_zz;
    guard_denominator(
        den,
        c.sigma_xx * c.sigma_zz,
        "x and z are collinear",
    )?;
    Ok((c.sigma_xw * c.sigma_xz - c.sigma_xx * c.sigma_zw) / den)
}

fn check_controls(data: &NCDataset, controls: &[usize]) -> Result<(), EstimatorError> {
    let available = data.covariate_count();
    for &index in controls {
        if index >= available {
            return Err(EstimatorError::ControlIndex { index, available });
        }
    }
    Ok(())
}

/// Covariances after partialling observed covariates out of `x, y, z, w`.
fn adjusted_covariances(data: &NCDataset) -> Result<CovarianceSummary, EstimatorError> {
    if data.covariate_count() == 0 {
        Ok(CovarianceSummary::from_dataset(data)?)
    } else {
        Ok(CovarianceSummary::from_dataset(&data.partial_out_covariates()?)?)
    }
}

fn all_covariate_terms(data: &NCDataset) -> Vec<Term> {
    (0..data.covariate_count()).map(Term::V).collect()
}

/// Just-identified moment spec whose second coefficient is the IV slope:
/// bridge `(1, x, v...)`, instruments `(1, z, v...)`.
fn iv_spec(data: &NCDataset) -> Result<MomentSpec, EstimatorError> {
    let mut b_terms = vec![Term::Intercept, Term::X];
    let mut q_terms = vec![Term::Intercept, Term::Z];
    for t in all_covariate_terms(data) {
        b_terms.push(t);
        q_terms.push(t);
    }
    let dim = b_terms.len();
    let bridge = BridgeModel::linear(b_terms, DVector::zeros(dim))?;
    Ok(MomentSpec::new(bridge, InstrumentMap::new(q_terms)?, None)?)
}

/// Just-identified moment spec whose second coefficient is the negative
/// control slope: bridge `(1, x, v..., w)`, instruments `(1, x, v..., z)`.
pub(crate) fn nc_spec(data: &NCDataset) -> Result<MomentSpec, EstimatorError> {
    let mut b_terms = vec![Term::Intercept, Term::X];
    let mut q_terms = vec![Term::Intercept, Term::X];
    for t in all_covariate_terms(data) {
        b_terms.push(t);
        q_terms.push(t);
    }
    b_terms.push(Term::W);
    q_terms.push(Term::Z);
    let dim = b_terms.len();
    let bridge = BridgeModel::linear(b_terms, DVector::zeros(dim))?;
    Ok(MomentSpec::new(bridge, InstrumentMap::new(q_terms)?, None)?)
}

/// Conventional IV ratio `s_zy / s_xz` (after partialling out covariates),
/// with the standard error of the matching just-identified GMM fit.
pub fn iv_estimate(data: &NCDataset) -> Result<EstimateWithSE, EstimatorError> {
    let value = iv_from_covariances(&adjusted_covariances(data)?)?;
    let fit = gmm_fit(&iv_spec(data)?, data)?;
    Ok(EstimateWithSE {
        value,
        std_error: fit.std_error(1),
        method: Method::Iv,
        warning: None,
    })
}

fn weak_stage_warning(data: &NCDataset) -> Result<Option<String>, EstimatorError> {
    let stage = first_stage_relevance(data)?;
    let t = if stage.std_error > 0.0 {
        stage.value / stage.std_error
    } else {
        f64::INFINITY
    };
    if t.abs() < 2.0 {
        Ok(Some(format!(
            "weak first stage: |t| = {:.2} for z in the regression of w on (1, x, z, v...)",
            t.abs()
        )))
    } else {
        Ok(None)
    }
}

/// Negative control estimator with the sandwich standard error of the
/// just-identified bridge/instrument fit. A first-stage |t| below 2 attaches
/// a weak-identification warning instead of failing.
pub fn nc_estimate(data: &NCDataset) -> Result<EstimateWithSE, EstimatorError> {
    let value = nc_from_covariances(&adjusted_covariances(data)?)?;
    let fit = gmm_fit(&nc_spec(data)?, data)?;
    Ok(EstimateWithSE {
        value,
        std_error: fit.std_error(1),
        method: Method::Nc,
        warning: weak_stage_warning(data)?,
    })
}

fn design_with(data: &NCDataset, columns: &[&DVector<f64>], controls: &[usize]) -> DMatrix<f64> {
    let n = data.len();
    let k = 1 + columns.len() + controls.len();
    DMatrix::from_fn(n, k, |r, c| {
        if c == 0 {
            1.0
        } else if c <= columns.len() {
            columns[c - 1][r]
        } else {
            data.v()[(r, controls[c - 1 - columns.len()])]
        }
    })
}

/// Modified two-stage least squares: fit `w ~ (1, x, z, v...)`, then regress
/// `y` on `(1, x, w_hat, v...)`. The coefficient of `x` is algebraically the
/// negative control estimator; the reported standard error is the same
/// sandwich as [`nc_estimate`].
pub fn nc_tsls(data: &NCDataset) -> Result<EstimateWithSE, EstimatorError> {
    let controls: Vec<usize> = (0..data.covariate_count()).collect();
    let first = ols_fit(
        &design_with(data, &[data.x(), data.z()], &controls),
        data.w(),
    )?;
    let second = ols_fit(
        &design_with(data, &[data.x(), &first.fitted], &controls),
        data.y(),
    )?;
    let fit = gmm_fit(&nc_spec(data)?, data)?;
    Ok(EstimateWithSE {
        value: second.coefficients[1],
        std_error: fit.std_error(1),
        method: Method::NcTsls,
        warning: weak_stage_warning(data)?,
    })
}

/// First-stage relevance: coefficient of `z` in `w ~ (1, x, z, v...)` with
/// its classical standard error. A small |t| signals weak identification of
/// the negative control estimator.
pub fn first_stage_relevance(data: &NCDataset) -> Result<EstimateWithSE, EstimatorError> {
    let controls: Vec<usize> = (0..data.covariate_count()).collect();
    let fit = ols_fit(
        &design_with(data, &[data.x(), data.z()], &controls),
        data.w(),
    )?;
    let value = fit.coefficients[2];
    let std_error = fit.std_errors[2];
    let t = if std_error > 0.0 { value / std_error } else { f64::INFINITY };
    Ok(EstimateWithSE {
        value,
        std_error,
        method: Method::FirstStage,
        warning: (t.abs() < 2.0).then(|| {
            format!("weak identification: first-stage |t| = {:.2}", t.abs())
        }),
    })
}

/// Least squares coefficient of `x` in `y ~ (1, x, v[controls])` with the
/// classical standard error.
pub fn ols_estimate(data: &NCDataset, controls: &[usize]) -> Result<EstimateWithSE, EstimatorError> {
    check_controls(data, controls)?;
    let fit = ols_fit(&design_with(data, &[data.x()], controls), data.y())?;
    Ok(EstimateWithSE {
        value: fit.coefficients[1],
        std_error: fit.std_errors[1],
        method: Method::Ols,
        warning: None,
    })
}

fn hajek_point(
    x: &DVector<f64>,
    y: &DVector<f64>,
    design: &DMatrix<f64>,
) -> Result<f64, EstimatorError> {
    let beta = logistic_fit(design, x)?;
    let n = x.len();
    let mut sums = [0.0_f64; 4]; // weighted y and weight totals per arm
    for i in 0..n {
        let eta: f64 = design.row(i).iter().zip(beta.iter()).map(|(d, b)| d * b).sum();
        let e = (1.0 / (1.0 + (-eta).exp())).clamp(0.01, 0.99);
        if x[i] == 1.0 {
            sums[0] += y[i] / e;
            sums[1] += 1.0 / e;
        } else {
            sums[2] += y[i] / (1.0 - e);
            sums[3] += 1.0 / (1.0 - e);
        }
    }
    if sums[1] == 0.0 || sums[3] == 0.0 {
        return Err(EstimatorError::IdentificationFailure(
            "one exposure arm is empty",
        ));
    }
    Ok(sums[0] / sums[1] - sums[2] / sums[3])
}

/// Inverse probability weighted contrast of means with a logistic propensity
/// on `(1, v[controls])`, Hajek-normalized, propensities clipped to
/// `[0.01, 0.99]`.
///
/// The standard error comes from a nonparametric bootstrap with
/// `bootstrap_reps` resamples drawn from `rng`; zero resamples skips the
/// bootstrap and reports a zero standard error with a warning.
pub fn ipw_estimate<R: Rng + ?Sized>(
    data: &NCDataset,
    controls: &[usize],
    rng: &mut R,
    bootstrap_reps: usize,
) -> Result<EstimateWithSE, EstimatorError> {
    check_controls(data, controls)?;
    if data.x().iter().any(|&xi| xi != 0.0 && xi != 1.0) {
        return Err(EstimatorError::NonBinaryExposure);
    }
    let design = design_with(data, &[], controls);
    let value = hajek_point(data.x(), data.y(), &design)?;
    if bootstrap_reps == 0 {
        return Ok(EstimateWithSE {
            value,
            std_error: 0.0,
            method: Method::Ipw,
            warning: Some("bootstrap skipped; standard error not estimated".into()),
        });
    }
    let n = data.len();
    let k = design.ncols();
    let mut draws = Vec::with_capacity(bootstrap_reps);
    let mut bx = DVector::zeros(n);
    let mut by = DVector::zeros(n);
    let mut bd = DMatrix::zeros(n, k);
    for _ in 0..bootstrap_reps {
        for i in 0..n {
            let j = rng.gen_range(0..n);
            bx[i] = data.x()[j];
            by[i] = data.y()[j];
            for c in 0..k {
                bd[(i, c)] = design[(j, c)];
            }
        }
        if let Ok(est) = hajek_point(&bx, &by, &bd) {
            draws.push(est);
        }
    }
    if draws.len() < bootstrap_reps / 2 {
        return Err(EstimatorError::BootstrapFailed {
            succeeded: draws.len(),
            attempted: bootstrap_reps,
        });
    }
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    Ok(EstimateWithSE {
        value,
        std_error: var.sqrt(),
        method: Method::Ipw,
        warning: None,
    })
}

/// Newey-West standard errors for a least squares fit with the given
/// residuals; `scores` are assembled as `e_i * d_i`.
pub(crate) fn hac_ols_std_errors(
    design: &DMatrix<f64>,
    residuals: &DVector<f64>,
    bandwidth: usize,
) -> Result<DVector<f64>, EstimatorError> {
    let (n, k) = design.shape();
    let mut scores = DMatrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            scores[(i, j)] = residuals[i] * design[(i, j)];
        }
    }
    let s = newey_west_long_run(&scores, bandwidth)?;
    let a = design.tr_mul(design) / n as f64;
    let a_inv = a
        .cholesky()
        .ok_or(DataError::RankDeficient { rank: 0, cols: k })?
        .inverse();
    let var = &a_inv * s * &a_inv / n as f64;
    Ok(DVector::from_fn(k, |i, _| var[(i, i)].max(0.0).sqrt()))
}

/// Regresses the negative control outcome on the exposure, the negative
/// control exposure and the given controls, with Newey-West inference.
///
/// Intended for lagged time-series designs where `w` and `z` are outcome and
/// exposure shifted k steps apart; significant coefficients indicate
/// unmeasured (serial) confounding.
pub fn confounding_test(
    data: &NCDataset,
    controls: &[usize],
    hac: &HacConfig,
) -> Result<ConfoundingTestResult, EstimatorError> {
    check_controls(data, controls)?;
    let n = data.len();
    if n <= controls.len() + 3 {
        return Err(EstimatorError::SampleTooSmall {
            needed: controls.len() + 3,
            got: n,
        });
    }
    let design = design_with(data, &[data.x(), data.z()], controls);
    let fit = ols_fit(&design, data.w())?;
    let bandwidth = hac.resolve(n)?;
    let ses = hac_ols_std_errors(&design, &fit.residuals, bandwidth)?;
    let (alpha1, se_alpha1) = (fit.coefficients[1], ses[1]);
    let (alpha2, se_alpha2) = (fit.coefficients[2], ses[2]);
    Ok(ConfoundingTestResult {
        alpha1,
        se_alpha1,
        p_alpha1: p_value(alpha1, se_alpha1),
        alpha2,
        se_alpha2,
        p_alpha2: p_value(alpha2, se_alpha2),
        hac_bandwidth: bandwidth,
        rows: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Population covariances of the linear latent-factor design
    /// `x = a*u + e_x`, `w = u + e_w`, `z = c*u + e_z`, `y = beta*x + u`:
    /// the nc ratio returns exactly `beta`.
    fn latent_covariances(beta: f64, a: f64, c: f64, s: f64) -> CovarianceSummary {
        CovarianceSummary::from_parts(
            a * a + s,                   // s_xx
            beta * (a * a + s) + a,      // s_xy
            a * c,                       // s_xz
            a,                           // s_xw
            beta * a * c + c,            // s_zy
            c,                           // s_zw
            c * c + 1.0,                 // s_zz
        )
    }

    #[test]
    fn nc_ratio_recovers_structural_slope_from_population_covariances() {
        for (beta, a, c, s) in [
            (0.5, 1.0, 1.0, 1.0),
            (-2.0, 0.7, 1.4, 0.3),
            (0.0, 2.0, 0.5, 2.0),
            (3.25, -1.2, 0.8, 0.5),
        ] {
            let c_sum = latent_covariances(beta, a, c, s);
            let est = nc_from_covariances(&c_sum).unwrap();
            assert_relative_eq!(est, beta, epsilon = 1e-12);
        }
    }

    #[test]
    fn iv_ratio_guards_zero_denominator() {
        let mut c = latent_covariances(1.0, 1.0, 1.0, 1.0);
        assert_relative_eq!(
            iv_from_covariances(&c).unwrap(),
            c.sigma_zy / c.sigma_xz,
            epsilon = 1e-15
        );
        c.sigma_xz = 0.0;
        assert!(matches!(
            iv_from_covariances(&c),
            Err(EstimatorError::IdentificationFailure(_))
        ));
    }

    #[test]
    fn degenerate_first_stage_detected() {
        // s_xw * s_xz - s_xx * s_zw = 1*1 - 2*0.5 = 0.
        let c = CovarianceSummary::from_parts(2.0, 0.3, 1.0, 1.0, 0.7, 0.5, 1.0);
        let slope = first_stage_slope_from_covariances(&c).unwrap();
        assert_relative_eq!(slope, 0.0, epsilon = 1e-15);
        assert!(matches!(
            nc_from_covariances(&c),
            Err(EstimatorError::IdentificationFailure(_))
        ));
    }

    fn simulated_nc_dataset(seed: u64, n: usize, covariates: usize) -> NCDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut norm = || -> f64 {
            let u: f64 = rng.gen_range(-1.0..1.0_f64);
            let v: f64 = rng.gen_range(-1.0..1.0_f64);
            u + v // light-tailed but asymmetric enough for a test fixture
        };
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        let mut v = vec![Vec::with_capacity(n); covariates];
        for _ in 0..n {
            let u = norm();
            let vs: Vec<f64> = (0..covariates).map(|_| norm()).collect();
            let vsum: f64 = vs.iter().sum();
            let zi = 0.4 * vsum + 1.3 * u + norm();
            let xi = 0.5 * zi + 0.2 * vsum + u + 0.5 * norm();
            let wi = 1.0 - 0.5 * vsum + 0.8 * u + norm();
            let yi = 1.0 + 0.7 * xi + 0.5 * vsum + 1.2 * u + norm();
            x.push(xi);
            y.push(yi);
            z.push(zi);
            w.push(wi);
            for (col, val) in v.iter_mut().zip(&vs) {
                col.push(*val);
            }
        }
        NCDataset::new(x, y, z, w, v).unwrap()
    }

    #[test]
    fn tsls_identity_holds_with_and_without_covariates() {
        for covariates in 0..3 {
            let data = simulated_nc_dataset(40 + covariates as u64, 120, covariates);
            let nc = nc_estimate(&data).unwrap();
            let tsls = nc_tsls(&data).unwrap();
            assert!(
                (nc.value - tsls.value).abs() <= 1e-10 * (1.0 + nc.value.abs()),
                "p={covariates}: nc {} vs tsls {}",
                nc.value,
                tsls.value
            );
        }
    }

    #[test]
    fn closed_forms_match_the_gmm_coefficients() {
        for covariates in 0..3 {
            let data = simulated_nc_dataset(77 + covariates as u64, 150, covariates);
            let nc = nc_from_covariances(&adjusted_covariances(&data).unwrap()).unwrap();
            let fit = gmm_fit(&nc_spec(&data).unwrap(), &data).unwrap();
            assert!(
                (nc - fit.theta_hat[1]).abs() <= 1e-10 * (1.0 + nc.abs()),
                "nc formula {} vs engine {}",
                nc,
                fit.theta_hat[1]
            );
            let iv = iv_from_covariances(&adjusted_covariances(&data).unwrap()).unwrap();
            let fit = gmm_fit(&iv_spec(&data).unwrap(), &data).unwrap();
            assert!(
                (iv - fit.theta_hat[1]).abs() <= 1e-10 * (1.0 + iv.abs()),
                "iv formula {} vs engine {}",
                iv,
                fit.theta_hat[1]
            );
        }
    }

    #[test]
    fn first_stage_matches_covariance_form_without_covariates() {
        let data = simulated_nc_dataset(9, 200, 0);
        let stage = first_stage_relevance(&data).unwrap();
        let c = CovarianceSummary::from_dataset(&data).unwrap();
        let formula = first_stage_slope_from_covariances(&c).unwrap();
        assert_relative_eq!(stage.value, formula, epsilon = 1e-10);
        assert!(stage.std_error > 0.0);
    }

    #[test]
    fn weak_first_stage_attaches_warning() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|xi| 0.3 * xi).collect();
        let data = NCDataset::new(x, y, z, w, vec![]).unwrap();
        let stage = first_stage_relevance(&data).unwrap();
        assert!(
            stage.warning.is_some(),
            "independent z and w should look weak, t = {}",
            stage.value / stage.std_error
        );

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = z.iter().map(|zi| 2.0 * zi + 0.1 * rng.gen_range(-1.0..1.0_f64)).collect();
        let y = x.clone();
        let strong = NCDataset::new(x, y, z, w, vec![]).unwrap();
        assert!(first_stage_relevance(&strong).unwrap().warning.is_none());
    }

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let n = 30;
        let x: Vec<f64> = (0..n).map(|i| (i as f64) / 7.0).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i * i) % 13) as f64 / 3.0).collect();
        let y: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| 2.0 - 1.5 * xi + 0.25 * vi).collect();
        let data = NCDataset::new(x, y, vec![0.0; n], vec![0.0; n], vec![v]).unwrap();
        let est = ols_estimate(&data, &[0]).unwrap();
        assert_relative_eq!(est.value, -1.5, epsilon = 1e-10);
        assert!(matches!(
            ols_estimate(&data, &[1]),
            Err(EstimatorError::ControlIndex { index: 1, available: 1 })
        ));
    }

    #[test]
    fn ipw_with_constant_propensity_is_difference_of_means() {
        let x = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let y = vec![3.0, 1.0, 5.0, 2.0, 4.0, 3.0];
        let data = NCDataset::new(x, y, vec![0.0; 6], vec![0.0; 6], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = ipw_estimate(&data, &[], &mut rng, 0).unwrap();
        assert_relative_eq!(est.value, 4.0 - 2.0, epsilon = 1e-12);
        assert!(est.warning.is_some(), "skipped bootstrap should warn");
    }

    #[test]
    fn ipw_point_estimate_is_permutation_invariant() {
        let data = simulated_binary(21, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = ipw_estimate(&data, &[0], &mut rng, 0).unwrap().value;
        // Reverse the rows.
        let rev = |v: &DVector<f64>| v.iter().rev().copied().collect::<Vec<f64>>();
        let vrev: Vec<f64> = (0..data.len()).rev().map(|i| data.v()[(i, 0)]).collect();
        let perm = NCDataset::new(
            rev(data.x()),
            rev(data.y()),
            rev(data.z()),
            rev(data.w()),
            vec![vrev],
        )
        .unwrap();
        let permuted = ipw_estimate(&perm, &[0], &mut rng, 0).unwrap().value;
        assert_relative_eq!(base, permuted, epsilon = 1e-12);
    }

    fn simulated_binary(seed: u64, n: usize) -> NCDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut v = Vec::new();
        for _ in 0..n {
            let vi: f64 = rng.gen_range(-1.0..1.0);
            let p = 1.0 / (1.0 + (-vi).exp());
            let xi = f64::from(rng.gen::<f64>() < p);
            let yi = 1.0 + 2.0 * xi + vi + rng.gen_range(-0.5..0.5);
            x.push(xi);
            y.push(yi);
            v.push(vi);
        }
        NCDataset::new(x, y, vec![0.0; n], vec![0.0; n], vec![v]).unwrap()
    }

    #[test]
    fn ipw_rejects_non_binary_exposure() {
        let data = simulated_nc_dataset(5, 50, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            ipw_estimate(&data, &[0], &mut rng, 10),
            Err(EstimatorError::NonBinaryExposure)
        ));
    }

    #[test]
    fn ipw_bootstrap_se_is_positive_and_stable() {
        let data = simulated_binary(8, 120);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est = ipw_estimate(&data, &[0], &mut rng, 100).unwrap();
        assert!(est.std_error > 0.0);
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let est2 = ipw_estimate(&data, &[0], &mut rng2, 100).unwrap();
        assert_eq!(est.std_error, est2.std_error, "same stream, same bootstrap");
    }

    #[test]
    fn confounding_test_recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n)
            .map(|i| 2.0 * x[i] + 1.0 * z[i] - 0.5 * v[i] + 0.01 * rng.gen_range(-1.0..1.0))
            .collect();
        let data = NCDataset::new(x, vec![0.0; n], z, w, vec![v]).unwrap();
        let res = confounding_test(&data, &[0], &HacConfig::Fixed(3)).unwrap();
        assert_relative_eq!(res.alpha1, 2.0, epsilon = 0.01);
        assert_relative_eq!(res.alpha2, 1.0, epsilon = 0.01);
        assert!(res.p_alpha1 < 1e-6);
        assert!(res.p_alpha2 < 1e-6);
        assert_eq!(res.hac_bandwidth, 3);
    }

    #[test]
    fn confounding_test_requires_enough_rows() {
        let data = simulated_nc_dataset(10, 4, 1);
        assert!(matches!(
            confounding_test(&data, &[0], &HacConfig::Fixed(1)),
            Err(EstimatorError::SampleTooSmall { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn signed_away_from_zero() -> impl Strategy<Value = f64> {
            (0.3..2.0_f64, proptest::bool::ANY)
                .prop_map(|(m, neg)| if neg { -m } else { m })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(256))]

            /// When the negative control outcome is uncorrelated with the
            /// negative control exposure, the nc ratio collapses to the iv
            /// ratio.
            #[test]
            fn nc_reduces_to_iv_without_zw_correlation(
                sxx in 0.5..4.0_f64,
                szz in 0.5..4.0_f64,
                sxz in signed_away_from_zero(),
                sxw in signed_away_from_zero(),
                sxy in -3.0..3.0_f64,
                szy in -3.0..3.0_f64,
            ) {
                let c = CovarianceSummary::from_parts(sxx, sxy, sxz, sxw, szy, 0.0, szz);
                let nc = nc_from_covariances(&c).unwrap();
                let iv = iv_from_covariances(&c).unwrap();
                let gap = (nc - iv).abs();
                prop_assert!(gap <= 1e-12 * iv.abs().max(1.0), "gap {gap}");
            }

            /// Rescaling the negative control outcome rescales both the
            /// numerator and denominator of the nc ratio, leaving the
            /// estimate unchanged.
            #[test]
            fn nc_is_invariant_to_rescaling_w(
                sxx in 0.5..4.0_f64,
                szz in 0.5..4.0_f64,
                sxz in signed_away_from_zero(),
                sxw in signed_away_from_zero(),
                sxy in -3.0..3.0_f64,
                szy in -3.0..3.0_f64,
                szw in -0.01..0.01_f64,
                lambda in signed_away_from_zero(),
            ) {
                let c = CovarianceSummary::from_parts(sxx, sxy, sxz, sxw, szy, szw, szz);
                let mut scaled = c.clone();
                scaled.sigma_xw *= lambda;
                scaled.sigma_zw *= lambda;
                scaled.sigma_ww *= lambda * lambda;
                let base = nc_from_covariances(&c).unwrap();
                let after = nc_from_covariances(&scaled).unwrap();
                let gap = (base - after).abs();
                prop_assert!(gap <= 1e-10 * base.abs().max(1.0), "gap {gap}");
            }
        }
    }
}
