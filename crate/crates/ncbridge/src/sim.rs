//! Monte Carlo studies of the negative control estimators.
//!
//! Three data generating processes with known effects cover the designs the
//! crate targets: a binary exposure with an interaction bridge, a continuous
//! exposure with a linear bridge, and a confounded time series analyzed
//! through lagged negative controls. `eta` scales the exposure-confounder
//! arrow (zero means no unmeasured confounding of `x`) and `xi` scales the
//! confounder's reach into the negative control side (for the time series it
//! is the confounder's autocorrelation instead).
//!
//! Replications are deterministic: replicate `r` of a study with master seed
//! `s` always sees the same random stream, regardless of thread count or
//! which other replicates run.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::bridge::{builtin_bridges, BridgeError, MomentSpec};
use crate::data::{DataError, NCDataset};
use crate::estimators::{
    hac_ols_std_errors, ipw_estimate, iv_estimate, ols_estimate, EstimatorError,
};
use crate::gmm::{gmm_fit, gmm_fit_with, GmmError, GmmOptions, HacConfig};
use crate::inference::confidence_interval;
use crate::timeseries::{build_lagged, simulate_ar1, Ar1Config, LaggedOptions, SeriesError, SeriesFrame};

/// Bootstrap resamples behind every simulated IPW standard error.
pub const IPW_BOOTSTRAP_REPS: usize = 200;
/// Newey-West bandwidth used by the time-series study.
pub const SERIES_BANDWIDTH: usize = 10;
const CI_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sample size must be at least 50, got {0}")]
    SampleTooSmall(usize),
    #[error("scenario parameters must be finite")]
    NonFiniteParameter,
    #[error("the time-series scenario needs |xi| < 1, got {0}")]
    InvalidAutocorrelation(f64),
    #[error("estimator {estimator} does not apply to the {scenario} scenario")]
    EstimatorMismatch {
        estimator: &'static str,
        scenario: &'static str,
    },
    #[error("at least one estimator is required")]
    NoEstimators,
    #[error("at least one replication is required")]
    NoReplications,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Which data generating process to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Binary exposure, interaction bridge, shared noise between `w` and `y`.
    BinaryExposure,
    /// Continuous exposure with a quadratic covariate surface and a linear
    /// additive bridge.
    StructuralContinuous,
    /// Autocorrelated confounder; negative controls come from lagging the
    /// series itself.
    Timeseries,
}

impl Scenario {
    /// True average causal effect under this process.
    pub fn truth(self) -> f64 {
        match self {
            Scenario::BinaryExposure | Scenario::StructuralContinuous => 0.5,
            Scenario::Timeseries => 0.7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::BinaryExposure => "binary",
            Scenario::StructuralContinuous => "structural",
            Scenario::Timeseries => "timeseries",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Scenario::BinaryExposure),
            "structural" => Ok(Scenario::StructuralContinuous),
            "timeseries" => Ok(Scenario::Timeseries),
            other => Err(format!(
                "unknown scenario {other:?}; expected binary, structural or timeseries"
            )),
        }
    }
}

/// A fully specified data generating process.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DgpConfig {
    pub scenario: Scenario,
    /// Strength of the confounder's arrow into the exposure.
    pub eta: f64,
    /// Strength of the confounder's arrow into the negative control outcome,
    /// or its autocorrelation in the time-series scenario.
    pub xi: f64,
    pub sample_size: usize,
}

impl DgpConfig {
    pub fn new(scenario: Scenario, eta: f64, xi: f64, sample_size: usize) -> Result<Self, SimError> {
        if !eta.is_finite() || !xi.is_finite() {
            return Err(SimError::NonFiniteParameter);
        }
        if sample_size < 50 {
            return Err(SimError::SampleTooSmall(sample_size));
        }
        if scenario == Scenario::Timeseries && xi.abs() >= 1.0 {
            return Err(SimError::InvalidAutocorrelation(xi));
        }
        Ok(DgpConfig { scenario, eta, xi, sample_size })
    }
}

/// One draw from a data generating process.
#[derive(Debug, Clone)]
pub enum GeneratedData {
    Iid(NCDataset),
    Series(SeriesFrame),
}

fn correlated_pair<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let n1: f64 = rng.sample(StandardNormal);
    let n2: f64 = rng.sample(StandardNormal);
    (n1, 0.5 * n1 + 0.75_f64.sqrt() * n2)
}

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Draws one dataset. The draw order per unit is fixed, so a given seed
/// reproduces the same data forever.
pub fn generate<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Result<GeneratedData, SimError> {
    let n = config.sample_size;
    let (eta, xi) = (config.eta, config.xi);
    match config.scenario {
        Scenario::BinaryExposure => {
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut z = Vec::with_capacity(n);
            let mut w = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let (vi, ui) = correlated_pair(rng);
                let e1: f64 = rng.sample(StandardNormal);
                let zi = 0.5 + 0.5 * vi + ui + e1;
                let xi_b = f64::from(rng.gen::<f64>() < expit(-0.5 + zi + 0.5 * vi + eta * ui));
                let e2: f64 = rng.sample(StandardNormal);
                let wi = 1.0 - vi + xi * ui + e2;
                let yi = 1.0 + 0.5 * xi_b + 2.0 * vi + ui + 1.5 * xi_b * ui + 2.0 * e2;
                x.push(xi_b);
                y.push(yi);
                z.push(zi);
                w.push(wi);
                v.push(vi);
            }
            Ok(GeneratedData::Iid(NCDataset::new(x, y, z, w, vec![v])?))
        }
        Scenario::StructuralContinuous => {
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut z = Vec::with_capacity(n);
            let mut w = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let (vi, ui) = correlated_pair(rng);
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let e3: f64 = rng.sample(StandardNormal);
                let zi = 0.5 + 1.5 * vi + eta * ui + e1;
                let xi_c = 0.5 + zi + 0.5 * vi + 0.5 * vi * vi + 1.5 * ui + e2;
                let wi = 1.0 - vi + xi * vi * vi + 1.5 * ui + e3;
                let yi = 1.0 + 0.5 * xi_c + vi + ui + 2.0 * e3;
                x.push(xi_c);
                y.push(yi);
                z.push(zi);
                w.push(wi);
                v.push(vi);
            }
            Ok(GeneratedData::Iid(NCDataset::new(x, y, z, w, vec![v])?))
        }
        Scenario::Timeseries => {
            let u = simulate_ar1(&Ar1Config::new(xi).map_err(SimError::from)?, n, rng);
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            for ui in u {
                let e2: f64 = rng.sample(StandardNormal);
                let e3: f64 = rng.sample(StandardNormal);
                let e4: f64 = rng.sample(StandardNormal);
                let vi = 0.6 * ui + e2;
                let xi_t = 0.4 + 1.5 * vi + eta * ui + e3;
                let yi = 0.5 + 0.7 * xi_t + 1.5 * vi + 0.9 * ui + e4;
                x.push(xi_t);
                y.push(yi);
                v.push(vi);
            }
            Ok(GeneratedData::Series(SeriesFrame::new(x, y, vec![v], 1)?))
        }
    }
}

/// Estimators a study can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Bridge-based negative control estimator.
    Nc,
    /// Outcome regression on the exposure and measured covariates.
    Ols,
    /// Outcome regression that additionally conditions on the lagged
    /// design's history columns and the past outcome.
    OlsLagged,
    /// Inverse probability weighting with a logistic propensity.
    Ipw,
    /// Instrumental variable ratio treating `z` as the instrument.
    Iv,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Nc => "nc",
            EstimatorKind::Ols => "ols",
            EstimatorKind::OlsLagged => "ols_lagged",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Iv => "iv",
        }
    }

    fn applies_to(self, scenario: Scenario) -> bool {
        match self {
            EstimatorKind::Nc | EstimatorKind::Ols => true,
            EstimatorKind::Ipw => scenario == Scenario::BinaryExposure,
            EstimatorKind::Iv => scenario != Scenario::Timeseries,
            EstimatorKind::OlsLagged => scenario == Scenario::Timeseries,
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nc" => Ok(EstimatorKind::Nc),
            "ols" => Ok(EstimatorKind::Ols),
            "ols_lagged" => Ok(EstimatorKind::OlsLagged),
            "ipw" => Ok(EstimatorKind::Ipw),
            "iv" => Ok(EstimatorKind::Iv),
            other => Err(format!(
                "unknown estimator {other:?}; expected nc, ols, ols_lagged, ipw or iv"
            )),
        }
    }
}

/// One successful estimate from one replicate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RepEstimate {
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub covered: bool,
}

/// Aggregates over the successful replicates of one estimator. The summary
/// statistics are absent when nothing succeeded (the spread additionally
/// needs two successes).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub successes: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub empirical_sd: Option<f64>,
    pub mean_std_error: Option<f64>,
    pub coverage: Option<f64>,
}

/// Machine-readable study summary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimulationReport {
    pub scenario: Scenario,
    pub eta: f64,
    pub xi: f64,
    pub sample_size: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub truth: f64,
    pub ci_level: f64,
    /// Bandwidth of the Newey-West variance in the time-series scenario.
    pub hac_bandwidth: Option<usize>,
    pub estimators: Vec<EstimatorSummary>,
}

/// Full study output: the summary plus every successful replicate estimate,
/// ordered by replicate and then by the requested estimator order.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub report: SimulationReport,
    pub replicates: Vec<RepEstimate>,
}

/// Stream seed for one replicate, mixed so that neighbouring replicates land
/// far apart in seed space.
pub fn derive_rep_seed(master: u64, rep: u64) -> u64 {
    let mut s = master ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    s = (s ^ (s >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    s ^ (s >> 31)
}

fn worker_count(replications: usize) -> usize {
    let configured = std::env::var("NC_THREADS")
        .ok()
        .and_then(|raw| raw.parse::<usize>().ok())
        .filter(|&t| t >= 1);
    let cap = configured.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8)
    });
    cap.min(replications).max(1)
}

fn binary_nc_spec() -> Result<MomentSpec, SimError> {
    let (bridge, instruments) = builtin_bridges("binary_interaction")?;
    Ok(MomentSpec::new(bridge, instruments, Some((1.0, 0.0)))?)
}

fn structural_nc_spec() -> Result<MomentSpec, SimError> {
    let (bridge, instruments) = builtin_bridges("linear_additive")?;
    Ok(MomentSpec::new(bridge, instruments, None)?)
}

fn lagged_nc_spec() -> Result<MomentSpec, SimError> {
    let (bridge, instruments) = builtin_bridges("timeseries_lag")?;
    Ok(MomentSpec::new(bridge, instruments, None)?)
}

fn hac_regression(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    coef: usize,
) -> Result<(f64, f64), SimError> {
    let fit = crate::data::ols_fit(design, response)?;
    let ses = hac_ols_std_errors(design, &fit.residuals, SERIES_BANDWIDTH)?;
    Ok((fit.coefficients[coef], ses[coef]))
}

/// Applies one estimator to one replicate; `rng` continues the replicate's
/// stream (the IPW bootstrap consumes it).
fn estimate_once<R: Rng + ?Sized>(
    config: &DgpConfig,
    kind: EstimatorKind,
    data: &GeneratedData,
    rng: &mut R,
) -> Result<(f64, f64), SimError> {
    match (data, kind) {
        (GeneratedData::Iid(data), EstimatorKind::Nc) => match config.scenario {
            Scenario::BinaryExposure => {
                let spec = binary_nc_spec()?;
                let fit = gmm_fit(&spec, data)?;
                let idx = spec.delta_index().expect("contrast is set");
                Ok((fit.theta_hat[idx], fit.std_error(idx)))
            }
            _ => {
                let spec = structural_nc_spec()?;
                let fit = gmm_fit(&spec, &data.with_residualized_z()?)?;
                Ok((fit.theta_hat[1], fit.std_error(1)))
            }
        },
        (GeneratedData::Iid(data), EstimatorKind::Ols) => {
            let est = ols_estimate(data, &[0])?;
            Ok((est.value, est.std_error))
        }
        (GeneratedData::Iid(data), EstimatorKind::Ipw) => {
            let est = ipw_estimate(data, &[0], rng, IPW_BOOTSTRAP_REPS)?;
            Ok((est.value, est.std_error))
        }
        (GeneratedData::Iid(data), EstimatorKind::Iv) => {
            let est = iv_estimate(data)?;
            Ok((est.value, est.std_error))
        }
        (GeneratedData::Series(frame), EstimatorKind::Nc) => {
            let (data, _) = build_lagged(frame, &LaggedOptions::default())?;
            let fit = gmm_fit_with(
                &lagged_nc_spec()?,
                &data,
                &GmmOptions {
                    hac: Some(HacConfig::Fixed(SERIES_BANDWIDTH)),
                    ..GmmOptions::default()
                },
            )?;
            Ok((fit.theta_hat[1], fit.std_error(1)))
        }
        (GeneratedData::Series(frame), EstimatorKind::Ols) => {
            let n = frame.len();
            let design = DMatrix::from_fn(n, 3, |r, c| match c {
                0 => 1.0,
                1 => frame.x()[r],
                _ => frame.covariates()[0][r],
            });
            let y = DVector::from_column_slice(frame.y());
            hac_regression(&design, &y, 1)
        }
        (GeneratedData::Series(frame), EstimatorKind::OlsLagged) => {
            let (data, layout) = build_lagged(frame, &LaggedOptions::default())?;
            let p = layout.total();
            let design = DMatrix::from_fn(data.len(), p + 3, |r, c| match c {
                0 => 1.0,
                1 => data.x()[r],
                c if c <= p + 1 => data.v()[(r, c - 2)],
                _ => data.w()[r],
            });
            hac_regression(&design, data.y(), 1)
        }
        (_, kind) => Err(SimError::EstimatorMismatch {
            estimator: kind.as_str(),
            scenario: config.scenario.as_str(),
        }),
    }
}

fn run_replicate(
    config: &DgpConfig,
    estimators: &[EstimatorKind],
    master_seed: u64,
    rep: usize,
) -> Vec<Option<RepEstimate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_rep_seed(master_seed, rep as u64));
    let truth = config.scenario.truth();
    let data = match generate(config, &mut rng) {
        Ok(data) => data,
        Err(_) => return vec![None; estimators.len()],
    };
    estimators
        .iter()
        .map(|&kind| {
            let (estimate, std_error) = estimate_once(config, kind, &data, &mut rng).ok()?;
            if !estimate.is_finite() || !std_error.is_finite() {
                return None;
            }
            let (ci_lower, ci_upper) = confidence_interval(estimate, std_error, CI_LEVEL);
            Some(RepEstimate {
                rep,
                estimator: kind,
                estimate,
                std_error,
                ci_lower,
                ci_upper,
                covered: ci_lower <= truth && truth <= ci_upper,
            })
        })
        .collect()
}

fn summarize(
    kind: EstimatorKind,
    replications: usize,
    truth: f64,
    estimates: &[RepEstimate],
) -> EstimatorSummary {
    let successes = estimates.len();
    let failures = replications - successes;
    let mean = (successes > 0)
        .then(|| estimates.iter().map(|r| r.estimate).sum::<f64>() / successes as f64);
    let empirical_sd = (successes > 1).then(|| {
        let m = mean.unwrap();
        (estimates.iter().map(|r| (r.estimate - m).powi(2)).sum::<f64>()
            / (successes - 1) as f64)
            .sqrt()
    });
    EstimatorSummary {
        estimator: kind,
        successes,
        failures,
        mean,
        bias: mean.map(|m| m - truth),
        empirical_sd,
        mean_std_error: (successes > 0)
            .then(|| estimates.iter().map(|r| r.std_error).sum::<f64>() / successes as f64),
        coverage: (successes > 0)
            .then(|| estimates.iter().filter(|r| r.covered).count() as f64 / successes as f64),
    }
}

/// Runs `replications` independent draws of the configured process and
/// applies each estimator, spreading replicates over worker threads. Results
/// are identical for any thread count, including one.
pub fn run_study(
    config: &DgpConfig,
    estimators: &[EstimatorKind],
    replications: usize,
    master_seed: u64,
) -> Result<StudyResult, SimError> {
    run_study_with_workers(config, estimators, replications, master_seed, worker_count(replications))
}

/// [`run_study`] with an explicit worker count.
pub fn run_study_with_workers(
    config: &DgpConfig,
    estimators: &[EstimatorKind],
    replications: usize,
    master_seed: u64,
    workers: usize,
) -> Result<StudyResult, SimError> {
    DgpConfig::new(config.scenario, config.eta, config.xi, config.sample_size)?;
    if estimators.is_empty() {
        return Err(SimError::NoEstimators);
    }
    if replications == 0 {
        return Err(SimError::NoReplications);
    }
    for &kind in estimators {
        if !kind.applies_to(config.scenario) {
            return Err(SimError::EstimatorMismatch {
                estimator: kind.as_str(),
                scenario: config.scenario.as_str(),
            });
        }
    }

    let workers = workers.min(replications).max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Vec<Option<RepEstimate>>>>> =
        (0..replications).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let rep = next.fetch_add(1, Ordering::Relaxed);
                if rep >= replications {
                    break;
                }
                let outcome = run_replicate(config, estimators, master_seed, rep);
                *slots[rep].lock().unwrap() = Some(outcome);
            });
        }
    });

    let truth = config.scenario.truth();
    let mut replicates = Vec::with_capacity(replications * estimators.len());
    let mut by_estimator: Vec<Vec<RepEstimate>> = vec![Vec::new(); estimators.len()];
    for slot in &slots {
        let outcome = slot.lock().unwrap().take().expect("every replicate ran");
        for (idx, entry) in outcome.into_iter().enumerate() {
            if let Some(rep_estimate) = entry {
                replicates.push(rep_estimate);
                by_estimator[idx].push(rep_estimate);
            }
        }
    }

    let summaries: Vec<EstimatorSummary> = estimators
        .iter()
        .zip(&by_estimator)
        .map(|(&kind, estimates)| summarize(kind, replications, truth, estimates))
        .collect();

    Ok(StudyResult {
        report: SimulationReport {
            scenario: config.scenario,
            eta: config.eta,
            xi: config.xi,
            sample_size: config.sample_size,
            replications,
            master_seed,
            truth,
            ci_level: CI_LEVEL,
            hac_bandwidth: (config.scenario == Scenario::Timeseries).then_some(SERIES_BANDWIDTH),
            estimators: summaries,
        },
        replicates,
    })
}

/// One latent-factor linear model: `w`, `x` load on a shared standard
/// normal factor, and `y = beta * x` plus its own loading and noise.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatentLinearConfig {
    pub label: String,
    pub beta: f64,
    /// Factor loadings of `(w, x, y)`.
    pub loadings: [f64; 3],
    /// Noise variances of `(w, x, y)`.
    pub noise_var: [f64; 3],
}

/// Covariance matrix of `(x, y, w)` implied by the model, in closed form.
pub fn analytic_covariance(config: &LatentLinearConfig) -> [[f64; 3]; 3] {
    let [a1, a2, a3] = config.loadings;
    let [v1, v2, v3] = config.noise_var;
    let b = config.beta;
    let s_xx = a2 * a2 + v2;
    let s_xy = b * s_xx + a2 * a3;
    let s_xw = a1 * a2;
    let s_yy = b * b * s_xx + 2.0 * b * a2 * a3 + a3 * a3 + v3;
    let s_yw = b * a1 * a2 + a1 * a3;
    let s_ww = a1 * a1 + v1;
    [
        [s_xx, s_xy, s_xw],
        [s_xy, s_yy, s_yw],
        [s_xw, s_yw, s_ww],
    ]
}

/// Two latent-factor models with opposite effects (`beta = 1` and
/// `beta = -1`) that imply the same covariance matrix of `(x, y, w)`: with a
/// single negative control outcome and no negative control exposure, the
/// observed distribution cannot separate them.
pub fn paired_settings() -> [LatentLinearConfig; 2] {
    [
        LatentLinearConfig {
            label: "beta = 1".to_string(),
            beta: 1.0,
            loadings: [1.0, 1.0, 1.0],
            noise_var: [1.0, 1.0, 4.0],
        },
        LatentLinearConfig {
            label: "beta = -1".to_string(),
            beta: -1.0,
            loadings: [(3.0_f64 / 5.0).sqrt(), (5.0_f64 / 3.0).sqrt(), 15.0_f64.sqrt()],
            noise_var: [7.0 / 5.0, 1.0 / 3.0, 2.0],
        },
    ]
}

/// The shared covariance matrix both paired settings imply.
pub fn shared_covariance() -> [[f64; 3]; 3] {
    [[2.0, 3.0, 1.0], [3.0, 9.0, 2.0], [1.0, 2.0, 2.0]]
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CounterexampleSetting {
    pub label: String,
    pub beta: f64,
    pub analytic: [[f64; 3]; 3],
    /// Largest absolute gap between the analytic matrix and the shared one.
    pub max_analytic_gap: f64,
    pub empirical: [[f64; 3]; 3],
    /// Whether every empirical entry sits within four standard errors of
    /// the shared matrix.
    pub empirical_ok: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CounterexampleReport {
    pub shared: [[f64; 3]; 3],
    pub sample_size: usize,
    pub settings: Vec<CounterexampleSetting>,
    /// True when both settings match the shared matrix analytically (to
    /// 1e-10) and empirically.
    pub consistent: bool,
}

fn empirical_covariance(config: &LatentLinearConfig, n: usize, rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let [a1, a2, a3] = config.loadings;
    let sd: Vec<f64> = config.noise_var.iter().map(|v| v.sqrt()).collect();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.sample(StandardNormal);
        let ew: f64 = rng.sample(StandardNormal);
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        let w = a1 * u + sd[0] * ew;
        let x = a2 * u + sd[1] * ex;
        let y = config.beta * x + a3 * u + sd[2] * ey;
        rows.push([x, y, w]);
    }
    let nf = n as f64;
    let mut means = [0.0; 3];
    for row in &rows {
        for (m, value) in means.iter_mut().zip(row) {
            *m += value / nf;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for row in &rows {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (row[i] - means[i]) * (row[j] - means[j]) / nf;
            }
        }
    }
    cov
}

/// Draws both paired settings and reports whether each reproduces the shared
/// covariance matrix, analytically and in a large sample.
pub fn counterexample_check(master_seed: u64, sample_size: usize) -> CounterexampleReport {
    let shared = shared_covariance();
    let mut consistent = true;
    let settings = paired_settings()
        .into_iter()
        .enumerate()
        .map(|(idx, config)| {
            let analytic = analytic_covariance(&config);
            let mut max_analytic_gap = 0.0_f64;
            for i in 0..3 {
                for j in 0..3 {
                    max_analytic_gap = max_analytic_gap.max((analytic[i][j] - shared[i][j]).abs());
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_rep_seed(master_seed, idx as u64));
            let empirical = empirical_covariance(&config, sample_size, &mut rng);
            let mut empirical_ok = true;
            for i in 0..3 {
                for j in 0..3 {
                    let tol = 4.0
                        * ((shared[i][i] * shared[j][j] + shared[i][j] * shared[i][j])
                            / sample_size as f64)
                            .sqrt();
                    if (empirical[i][j] - shared[i][j]).abs() > tol {
                        empirical_ok = false;
                    }
                }
            }
            consistent &= max_analytic_gap <= 1e-10 && empirical_ok;
            CounterexampleSetting {
                label: config.label.clone(),
                beta: config.beta,
                analytic,
                max_analytic_gap,
                empirical,
                empirical_ok,
            }
        })
        .collect();
    CounterexampleReport {
        shared,
        sample_size,
        settings,
        consistent,
    }
}
