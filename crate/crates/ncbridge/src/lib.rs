//! Causal inference with double negative controls.
//!
//! Unmeasured confounding is detectable, and correctable, when the data
//! carry two auxiliary variables: a negative control exposure `z` that does
//! not affect the outcome, and a negative control outcome `w` that the
//! exposure does not affect, both sharing the confounder of the main
//! exposure-outcome pair. This crate estimates average causal effects from
//! such data by fitting an outcome confounding bridge, a function `b(w, x)`
//! whose mixture over the confounder reproduces the outcome regression.
//!
//! The pieces:
//!
//! - [`data`]: the four-column dataset with covariates, CSV I/O, sample
//!   covariances and basic regressions.
//! - [`bridge`]: bridge functions, instrument vectors and the stacked moment
//!   conditions they induce.
//! - [`gmm`]: method of moments fitting with sandwich and Newey-West
//!   variances.
//! - [`estimators`]: closed-form negative control, IV, OLS and IPW
//!   estimators plus a residual confounding regression test.
//! - [`summary`]: adjustments that need only published risk differences,
//!   including positive control sensitivity analysis.
//! - [`timeseries`]: lagged negative control designs for a single series.
//! - [`sim`]: reproducible Monte Carlo studies of all of the above.
//! - [`report`]: serializable reports and plain-text tables.
//!
//! ```
//! use ncbridge::{gmm_fit, builtin_bridges, MomentSpec, NCDataset};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let n = 400;
//! // y responds to x with slope 1 and to a latent u; w and z see the same u.
//! let u: Vec<f64> = (0..n).map(|i| ((i * 37) % 97) as f64 / 97.0 - 0.5).collect();
//! let e: Vec<f64> = (0..n).map(|i| ((i * 61) % 89) as f64 / 89.0 - 0.5).collect();
//! let z: Vec<f64> = u.iter().zip(&e).map(|(u, e)| u + e).collect();
//! let x: Vec<f64> = z.iter().zip(&u).map(|(z, u)| 0.5 * z + u).collect();
//! let w: Vec<f64> = u.iter().map(|u| 2.0 * u).collect();
//! let y: Vec<f64> = x.iter().zip(&u).map(|(x, u)| x + 3.0 * u).collect();
//! let data = NCDataset::new(x, y, z, w, vec![])?;
//!
//! let (bridge, instruments) = builtin_bridges("structural")?;
//! let fit = gmm_fit(&MomentSpec::new(bridge, instruments, None)?, &data)?;
//! assert!((fit.theta_hat[1] - 1.0).abs() < 1e-8);
//! # Ok(())
//! # }
//! ```

pub mod bridge;
pub mod data;
pub mod estimators;
pub mod gmm;
pub mod inference;
pub mod report;
pub mod sim;
pub mod summary;
pub mod timeseries;

pub use bridge::{
    builtin_bridges, builtin_names, BridgeError, BridgeKind, BridgeModel, InstrumentMap,
    MomentConfig, MomentSpec, Term,
};
pub use data::{
    read_columns, read_csv, write_csv, ColumnMap, CovarianceSummary, DataError, NCDataset,
    Transform,
};
pub use estimators::{
    confounding_test, first_stage_relevance, ipw_estimate, iv_estimate, nc_estimate, nc_tsls,
    ols_estimate, ConfoundingTestResult, EstimateWithSE, EstimatorError, Method,
};
pub use gmm::{
    gmm_fit, gmm_fit_with, newey_west_long_run, GmmError, GmmFit, GmmOptions, HacConfig,
    SolverChoice, SolverKind,
};
pub use inference::{confidence_interval, coverage_probability, normal_quantile, p_value};
pub use report::{
    parameter_names, render_adjustment, render_confounding, render_counterexample,
    render_estimates, render_gmm, render_sensitivity, render_series, render_simulation,
    EstimateReport, GmmReport,
};
pub use sim::{
    counterexample_check, derive_rep_seed, generate, run_study, run_study_with_workers,
    CounterexampleReport, DgpConfig, EstimatorKind, GeneratedData, RepEstimate, Scenario,
    SimError, SimulationReport, StudyResult,
};
pub use summary::{
    binary_nc_adjust, parse_summary, positive_control_adjust, read_summary, write_summary,
    BinaryAdjustment, RiskDifferenceSummary, SensitivityResult, SummaryError,
};
pub use timeseries::{
    analyze_series, build_lagged, simulate_ar1, trend_basis, Ar1Config, LaggedLayout,
    LaggedOptions, SeriesAnalysis, SeriesError, SeriesFrame, SeriesOptions,
};
