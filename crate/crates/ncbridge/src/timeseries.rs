//! Negative control designs for a single time series.
//!
//! With serially correlated unmeasured confounding, past outcomes and
//! future exposures make natural negative controls: for a gap `k`, row `i`
//! of the lagged design pairs the current `(x_i, y_i)` with
//!
//! ```text
//! w_j = y_{i-k}    (negative control outcome: a past outcome)
//! z_j = x_{i+k}    (negative control exposure: a future exposure)
//! ```
//!
//! plus exposure history, measured covariates at both dates, and optional
//! smooth/seasonal trend columns. The same machinery then applies verbatim:
//! a residual-confounding regression test, and bridge-based estimation with
//! autocorrelation robust standard errors.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bridge::{BridgeError, BridgeModel, InstrumentMap, MomentSpec, Term};
use crate::data::{DataError, NCDataset};
use crate::estimators::{
    confounding_test, hac_ols_std_errors, ConfoundingTestResult, EstimatorError,
};
use crate::gmm::{gmm_fit_with, GmmError, GmmOptions, HacConfig};

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("lag must be at least 1, got {0}")]
    InvalidLag(usize),
    #[error("exposure_lags must be at least 1, got {0}")]
    InvalidExposureLags(usize),
    #[error("series of length {length} is too short; need at least {needed} observations")]
    TooShort { length: usize, needed: usize },
    #[error("autoregression coefficient must satisfy |xi| < 1, got {0}")]
    InvalidAutocorrelation(f64),
}

/// A raw time series: one exposure and outcome per time step, plus any
/// measured covariate series, and the negative control gap `lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    x: Vec<f64>,
    y: Vec<f64>,
    covariates: Vec<Vec<f64>>,
    lag: usize,
}

impl SeriesFrame {
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        lag: usize,
    ) -> Result<Self, SeriesError> {
        if lag == 0 {
            return Err(SeriesError::InvalidLag(0));
        }
        let len = x.len();
        check_series("y", &y, len)?;
        check_series("x", &x, len)?;
        for (j, col) in covariates.iter().enumerate() {
            check_series(&format!("v{j}"), col, len)?;
        }
        Ok(SeriesFrame { x, y, covariates, lag })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }
}

fn check_series(name: &str, values: &[f64], expected: usize) -> Result<(), DataError> {
    if values.len() != expected {
        return Err(DataError::LengthMismatch(expected, values.len()));
    }
    for (row, value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(DataError::NonFinite {
                column: name.to_string(),
                row: row + 1,
            });
        }
    }
    Ok(())
}

/// Stationary AR(1) process with unit marginal variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Config {
    xi: f64,
}

impl Ar1Config {
    pub fn new(xi: f64) -> Result<Self, SeriesError> {
        if !xi.is_finite() || xi.abs() >= 1.0 {
            return Err(SeriesError::InvalidAutocorrelation(xi));
        }
        Ok(Ar1Config { xi })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Innovation standard deviation that keeps the marginal variance at 1.
    pub fn innovation_sd(&self) -> f64 {
        (1.0 - self.xi * self.xi).sqrt()
    }
}

/// Draws a stationary AR(1) path: the first value is standard normal and
/// each step adds a scaled normal innovation.
pub fn simulate_ar1<R: Rng + ?Sized>(config: &Ar1Config, len: usize, rng: &mut R) -> Vec<f64> {
    let sd = config.innovation_sd();
    let mut path = Vec::with_capacity(len);
    let mut current: f64 = rng.sample(StandardNormal);
    for _ in 0..len {
        path.push(current);
        let innovation: f64 = rng.sample(StandardNormal);
        current = config.xi * current + sd * innovation;
    }
    path
}

/// Smooth and seasonal trend columns for a series of length `len`:
/// `t/len`, `(t/len)^2`, then `sin(2 pi j t / 365)` and `cos(2 pi j t / 365)`
/// for `j = 1..=harmonics`, with `t` one-based.
pub fn trend_basis(len: usize, harmonics: usize) -> Vec<Vec<f64>> {
    let mut columns = vec![Vec::with_capacity(len); 2 + 2 * harmonics];
    for t in 1..=len {
        let scaled = t as f64 / len as f64;
        columns[0].push(scaled);
        columns[1].push(scaled * scaled);
        for j in 1..=harmonics {
            let angle = 2.0 * std::f64::consts::PI * (j * t) as f64 / 365.0;
            columns[2 * j].push(angle.sin());
            columns[2 * j + 1].push(angle.cos());
        }
    }
    columns
}

/// Options for [`build_lagged`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaggedOptions {
    /// How many past exposures `x_{i-1}, ..., x_{i-L}` enter as covariates.
    pub exposure_lags: usize,
    /// `Some(j)` adds polynomial-plus-seasonal trend columns with `j`
    /// sin/cos pairs (see [`trend_basis`]) at both the current and the
    /// lagged date.
    pub trend_harmonics: Option<usize>,
}

impl Default for LaggedOptions {
    fn default() -> Self {
        LaggedOptions {
            exposure_lags: 1,
            trend_harmonics: None,
        }
    }
}

/// Where each covariate family landed in the lagged design. Column order is
/// exposure lags, current covariates, lagged covariates, current trend,
/// lagged trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaggedLayout {
    pub exposure_lags: usize,
    pub covariates: usize,
    pub trend_cols: usize,
}

impl LaggedLayout {
    pub fn total(&self) -> usize {
        self.exposure_lags + 2 * self.covariates + 2 * self.trend_cols
    }

    /// Everything the outcome bridge adjusts for: exposure history, both
    /// covariate copies and the current-date trend. The lagged trend column
    /// block is left out; it belongs to the negative control side only.
    pub fn bridge_controls(&self) -> Vec<usize> {
        (0..self.exposure_lags + 2 * self.covariates + self.trend_cols).collect()
    }

    /// Lagged-date columns for the residual confounding regression:
    /// exposure history, lagged covariates, lagged trend.
    pub fn confounding_controls(&self) -> Vec<usize> {
        let l = self.exposure_lags;
        let p = self.covariates;
        let tau = self.trend_cols;
        let mut cols: Vec<usize> = (0..l).collect();
        cols.extend(l + p..l + 2 * p);
        cols.extend(l + 2 * p + tau..l + 2 * p + 2 * tau);
        cols
    }

    /// Current-date columns for a plain outcome regression: exposure
    /// history, current covariates, current trend.
    pub fn current_controls(&self) -> Vec<usize> {
        let l = self.exposure_lags;
        let p = self.covariates;
        let tau = self.trend_cols;
        let mut cols: Vec<usize> = (0..l).collect();
        cols.extend(l..l + p);
        cols.extend(l + 2 * p..l + 2 * p + tau);
        cols
    }
}

/// Builds the lagged negative control dataset from a raw series.
///
/// Rows are indexed by `i` from `max(lag, exposure_lags)` to
/// `len - lag - 1` so every lag and lead exists; the window keeps
/// `len - lag - max(lag, exposure_lags)` rows and needs at least two.
pub fn build_lagged(
    frame: &SeriesFrame,
    options: &LaggedOptions,
) -> Result<(NCDataset, LaggedLayout), SeriesError> {
    if options.exposure_lags == 0 {
        return Err(SeriesError::InvalidExposureLags(0));
    }
    let k = frame.lag;
    let l = options.exposure_lags;
    let t = frame.len();
    let start = k.max(l);
    let needed = start + k + 2;
    if t < needed {
        return Err(SeriesError::TooShort { length: t, needed });
    }
    let n = t - k - start;
    let trend = options
        .trend_harmonics
        .map(|h| trend_basis(t, h))
        .unwrap_or_default();
    let layout = LaggedLayout {
        exposure_lags: l,
        covariates: frame.covariates.len(),
        trend_cols: trend.len(),
    };

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut v = vec![Vec::with_capacity(n); layout.total()];
    for i in start..t - k {
        x.push(frame.x[i]);
        y.push(frame.y[i]);
        w.push(frame.y[i - k]);
        z.push(frame.x[i + k]);
        let mut col = 0;
        for lag in 1..=l {
            v[col].push(frame.x[i - lag]);
            col += 1;
        }
        for series in &frame.covariates {
            v[col].push(series[i]);
            col += 1;
        }
        for series in &frame.covariates {
            v[col].push(series[i - k]);
            col += 1;
        }
        for series in &trend {
            v[col].push(series[i]);
            col += 1;
        }
        for series in &trend {
            v[col].push(series[i - k]);
            col += 1;
        }
    }
    Ok((NCDataset::new(x, y, z, w, v)?, layout))
}

/// Options for [`analyze_series`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub lagged: LaggedOptions,
    pub hac: HacConfig,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            lagged: LaggedOptions::default(),
            hac: HacConfig::default(),
        }
    }
}

/// Full negative control workup of one time series: a plain outcome
/// regression, the residual confounding test, and the bridge-based
/// estimate, all with Newey-West standard errors at the same bandwidth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeriesAnalysis {
    pub rows_used: usize,
    pub hac_bandwidth: usize,
    /// Coefficient of `x` in `y ~ (1, x, current-date controls)`.
    pub ols_estimate: f64,
    pub ols_std_error: f64,
    pub confounding: ConfoundingTestResult,
    /// Coefficient of `x` in the fitted outcome bridge.
    pub nc_estimate: f64,
    pub nc_std_error: f64,
    pub nc_converged: bool,
    /// Full bridge coefficient vector (intercept, x, controls..., w).
    pub gamma: Vec<f64>,
    pub gamma_std_errors: Vec<f64>,
}

fn lagged_nc_spec(layout: &LaggedLayout) -> Result<MomentSpec, SeriesError> {
    let mut b_terms = vec![Term::Intercept, Term::X];
    let mut q_terms = vec![Term::Intercept, Term::X];
    for idx in layout.bridge_controls() {
        b_terms.push(Term::V(idx));
        q_terms.push(Term::V(idx));
    }
    b_terms.push(Term::W);
    q_terms.push(Term::Z);
    let dim = b_terms.len();
    let bridge = BridgeModel::linear(b_terms, DVector::zeros(dim))?;
    Ok(MomentSpec::new(bridge, InstrumentMap::new(q_terms)?, None)?)
}

pub fn analyze_series(
    frame: &SeriesFrame,
    options: &SeriesOptions,
) -> Result<SeriesAnalysis, SeriesError> {
    let (data, layout) = build_lagged(frame, &options.lagged)?;
    let n = data.len();
    let bandwidth = options.hac.resolve(n)?;

    let current = layout.current_controls();
    let design = nalgebra::DMatrix::from_fn(n, 2 + current.len(), |r, c| match c {
        0 => 1.0,
        1 => data.x()[r],
        _ => data.v()[(r, current[c - 2])],
    });
    let ols = crate::data::ols_fit(&design, data.y())?;
    let ols_hac = hac_ols_std_errors(&design, &ols.residuals, bandwidth)?;

    let confounding = confounding_test(&data, &layout.confounding_controls(), &options.hac)?;

    let spec = lagged_nc_spec(&layout)?;
    let fit = gmm_fit_with(
        &spec,
        &data,
        &GmmOptions {
            hac: Some(options.hac),
            ..GmmOptions::default()
        },
    )?;

    Ok(SeriesAnalysis {
        rows_used: n,
        hac_bandwidth: bandwidth,
        ols_estimate: ols.coefficients[1],
        ols_std_error: ols_hac[1],
        confounding,
        nc_estimate: fit.theta_hat[1],
        nc_std_error: fit.std_error(1),
        nc_converged: fit.converged,
        gamma: fit.theta_hat.iter().copied().collect(),
        gamma_std_errors: fit.std_errors().iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_frame() -> SeriesFrame {
        SeriesFrame::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![10.0, 20.0, 30.0, 40.0, 50.0],
            vec![vec![0.1, 0.2, 0.3, 0.4, 0.5]],
            1,
        )
        .unwrap()
    }

    #[test]
    fn lagged_columns_follow_their_defining_identities() {
        let (data, layout) = build_lagged(&toy_frame(), &LaggedOptions::default()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(layout.total(), 3);
        let col = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
        assert_eq!(col(data.x()), vec![2.0, 3.0, 4.0]);
        assert_eq!(col(data.y()), vec![20.0, 30.0, 40.0]);
        assert_eq!(col(data.w()), vec![10.0, 20.0, 30.0]);
        assert_eq!(col(data.z()), vec![3.0, 4.0, 5.0]);
        let v_col = |j: usize| (0..data.len()).map(|i| data.v()[(i, j)]).collect::<Vec<f64>>();
        assert_eq!(v_col(0), vec![1.0, 2.0, 3.0]); // exposure lag 1
        assert_eq!(v_col(1), vec![0.2, 0.3, 0.4]); // current covariate
        assert_eq!(v_col(2), vec![0.1, 0.2, 0.3]); // lagged covariate
    }

    #[test]
    fn window_sizes_match_the_lag_and_history() {
        let series = |t: usize, lag: usize| {
            SeriesFrame::new(
                (0..t).map(|i| i as f64).collect(),
                (0..t).map(|i| (i * i) as f64).collect(),
                vec![],
                lag,
            )
            .unwrap()
        };
        let (data, _) = build_lagged(&series(6, 2), &LaggedOptions::default()).unwrap();
        assert_eq!(data.len(), 2);
        // z = x_{i+2} for i in {2, 3}
        assert_eq!(data.z()[0], 4.0);
        assert_eq!(data.z()[1], 5.0);

        assert!(matches!(
            build_lagged(&series(5, 2), &LaggedOptions::default()),
            Err(SeriesError::TooShort { length: 5, needed: 6 })
        ));

        let opts = LaggedOptions { exposure_lags: 2, trend_harmonics: None };
        let (data, layout) = build_lagged(&series(8, 1), &opts).unwrap();
        assert_eq!(data.len(), 5); // i in {2, ..., 6}
        assert_eq!(layout.exposure_lags, 2);
        assert_eq!(data.v()[(0, 0)], 1.0); // x_{i-1} at i = 2
        assert_eq!(data.v()[(0, 1)], 0.0); // x_{i-2} at i = 2
    }

    #[test]
    fn zero_lag_and_zero_history_are_rejected() {
        assert!(matches!(
            SeriesFrame::new(vec![1.0; 10], vec![1.0; 10], vec![], 0),
            Err(SeriesError::InvalidLag(0))
        ));
        let frame = toy_frame();
        let opts = LaggedOptions { exposure_lags: 0, trend_harmonics: None };
        assert!(matches!(
            build_lagged(&frame, &opts),
            Err(SeriesError::InvalidExposureLags(0))
        ));
    }

    #[test]
    fn layout_helpers_partition_the_columns() {
        let layout = LaggedLayout { exposure_lags: 2, covariates: 1, trend_cols: 2 };
        assert_eq!(layout.total(), 8);
        assert_eq!(layout.bridge_controls(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(layout.confounding_controls(), vec![0, 1, 3, 6, 7]);
        assert_eq!(layout.current_controls(), vec![0, 1, 2, 4, 5]);
    }

    #[test]
    fn trend_columns_are_scaled_and_seasonal() {
        let cols = trend_basis(365, 1);
        assert_eq!(cols.len(), 4);
        assert_relative_eq!(cols[0][364], 1.0, epsilon = 1e-15);
        assert_relative_eq!(cols[1][181], cols[0][181] * cols[0][181], epsilon = 1e-15);
        // One full seasonal cycle at t = 365.
        assert_relative_eq!(cols[2][364], 0.0, epsilon = 1e-12);
        assert_relative_eq!(cols[3][364], 1.0, epsilon = 1e-12);

        let frame = SeriesFrame::new(
            (0..30).map(|i| i as f64).collect(),
            (0..30).map(|i| i as f64 + 1.0).collect(),
            vec![],
            1,
        )
        .unwrap();
        let opts = LaggedOptions { exposure_lags: 1, trend_harmonics: Some(1) };
        let (data, layout) = build_lagged(&frame, &opts).unwrap();
        assert_eq!(layout.trend_cols, 4);
        assert_eq!(data.covariate_count(), 9);
    }

    #[test]
    fn ar1_path_is_stationary_with_unit_variance() {
        assert!(Ar1Config::new(1.0).is_err());
        assert!(Ar1Config::new(-1.2).is_err());
        let config = Ar1Config::new(0.8).unwrap();
        assert_relative_eq!(config.innovation_sd(), 0.6, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let path = simulate_ar1(&config, 200_000, &mut rng);
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var = path.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / n;
        let lag1 = path
            .windows(2)
            .map(|p| (p[0] - mean) * (p[1] - mean))
            .sum::<f64>()
            / (n - 1.0);
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
        assert!((lag1 / var - 0.8).abs() < 0.01, "lag-1 correlation {}", lag1 / var);
    }

    fn confounded_series(seed: u64, t: usize, eta: f64, xi: f64) -> SeriesFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = simulate_ar1(&Ar1Config::new(xi).unwrap(), t, &mut rng);
        let mut x = Vec::with_capacity(t);
        let mut y = Vec::with_capacity(t);
        let mut v = Vec::with_capacity(t);
        for ui in u {
            let e2: f64 = rng.sample(StandardNormal);
            let e3: f64 = rng.sample(StandardNormal);
            let e4: f64 = rng.sample(StandardNormal);
            let vi = 0.6 * ui + e2;
            let xi_t = 0.4 + 1.5 * vi + eta * ui + e3;
            y.push(0.5 + 0.7 * xi_t + 1.5 * vi + 0.9 * ui + e4);
            x.push(xi_t);
            v.push(vi);
        }
        SeriesFrame::new(x, y, vec![v], 1).unwrap()
    }

    #[test]
    fn series_analysis_flags_and_removes_serial_confounding() {
        let frame = confounded_series(5, 2000, 0.5, 0.9);
        let options = SeriesOptions {
            lagged: LaggedOptions::default(),
            hac: HacConfig::Fixed(10),
        };
        let analysis = analyze_series(&frame, &options).unwrap();
        assert_eq!(analysis.hac_bandwidth, 10);
        assert_eq!(analysis.rows_used, 1998);
        assert!(analysis.nc_converged);
        // The confounded regression sits well above the truth; the bridge
        // estimate does not.
        assert!(analysis.ols_estimate > 0.75, "ols {}", analysis.ols_estimate);
        assert!(
            (analysis.nc_estimate - 0.7).abs() < 0.15,
            "nc {}",
            analysis.nc_estimate
        );
        assert!(analysis.confounding.p_alpha2 < 0.01, "p {}", analysis.confounding.p_alpha2);
        assert_eq!(analysis.gamma.len(), 6);
        assert_relative_eq!(analysis.gamma[1], analysis.nc_estimate, epsilon = 1e-15);

        let again = analyze_series(&frame, &options).unwrap();
        assert_eq!(analysis, again);
    }

    #[test]
    fn unconfounded_series_leaves_both_estimators_near_truth() {
        // eta = 0: the confounder reaches x only through the measured
        // covariate, so the plain regression is fine too; xi > 0 keeps the
        // lagged bridge identified.
        let frame = confounded_series(6, 1500, 0.0, 0.5);
        let analysis = analyze_series(&frame, &SeriesOptions::default()).unwrap();
        assert!((analysis.nc_estimate - 0.7).abs() < 0.1, "nc {}", analysis.nc_estimate);
        assert!((analysis.ols_estimate - 0.7).abs() < 0.1, "ols {}", analysis.ols_estimate);
    }
}
