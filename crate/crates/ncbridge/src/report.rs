//! Report types shared by library callers and the command line front end:
//! serializable summaries of fits plus plain-text table rendering.

use std::fmt::Write as _;

use crate::bridge::MomentSpec;
use crate::estimators::{ConfoundingTestResult, EstimateWithSE};
use crate::gmm::GmmFit;
use crate::inference::{confidence_interval, p_value};
use crate::sim::{CounterexampleReport, SimulationReport};
use crate::summary::{BinaryAdjustment, SensitivityResult};
use crate::timeseries::SeriesAnalysis;

/// One scalar estimate, ready to print or serialize.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_level: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub p_value: f64,
    pub rows: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl EstimateReport {
    pub fn from_estimate(est: &EstimateWithSE, rows: usize, ci_level: f64) -> Self {
        let (ci_lower, ci_upper) = confidence_interval(est.value, est.std_error, ci_level);
        EstimateReport {
            method: est.method.as_str().to_string(),
            estimate: est.value,
            std_error: est.std_error,
            ci_level,
            ci_lower,
            ci_upper,
            p_value: p_value(est.value, est.std_error),
            rows,
            warning: est.warning.clone(),
        }
    }
}

/// A full parameter table for a fitted moment specification.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmReport {
    pub parameters: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_level: f64,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub p_values: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub solver: String,
    pub rows: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hac_bandwidth: Option<usize>,
}

/// Display names for the parameters of a moment specification: the bridge
/// terms (or positional `gamma` labels for a custom bridge), then `delta`
/// when a contrast is present.
pub fn parameter_names(spec: &MomentSpec) -> Vec<String> {
    let mut names: Vec<String> = match spec.bridge.terms() {
        Some(terms) => terms.iter().map(|t| t.to_string()).collect(),
        None => (0..spec.bridge.dim()).map(|i| format!("gamma{i}")).collect(),
    };
    if spec.delta_index().is_some() {
        names.push("delta".to_string());
    }
    names
}

impl GmmReport {
    pub fn from_fit(fit: &GmmFit, parameters: Vec<String>, rows: usize, ci_level: f64) -> Self {
        let k = fit.theta_hat.len();
        let ses = fit.std_errors();
        let mut ci_lower = Vec::with_capacity(k);
        let mut ci_upper = Vec::with_capacity(k);
        let mut p_values = Vec::with_capacity(k);
        for i in 0..k {
            let (lo, hi) = confidence_interval(fit.theta_hat[i], ses[i], ci_level);
            ci_lower.push(lo);
            ci_upper.push(hi);
            p_values.push(p_value(fit.theta_hat[i], ses[i]));
        }
        GmmReport {
            parameters,
            estimates: fit.theta_hat.iter().copied().collect(),
            std_errors: ses.iter().copied().collect(),
            ci_level,
            ci_lower,
            ci_upper,
            p_values,
            objective: fit.objective,
            converged: fit.converged,
            iterations: fit.iterations,
            solver: fit.solver.as_str().to_string(),
            rows,
            hac_bandwidth: fit.hac_bandwidth,
        }
    }
}

fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs();
    if magnitude >= 1e5 || magnitude < 1e-4 {
        format!("{x:.4e}")
    } else {
        format!("{x:.4}")
    }
}

fn pval(p: f64) -> String {
    if p < 1e-4 {
        "<1e-4".to_string()
    } else {
        format!("{p:.4}")
    }
}

fn row(out: &mut String, cells: &[String], widths: &[usize]) {
    for (cell, width) in cells.iter().zip(widths) {
        let _ = write!(out, "{cell:>width$}  ");
    }
    out.pop();
    out.pop();
    out.push('\n');
}

fn table(header: &[&str], body: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for cells in &body {
        for (width, cell) in widths.iter_mut().zip(cells) {
            *width = (*width).max(cell.len());
        }
    }
    let mut out = String::new();
    row(
        &mut out,
        &header.iter().map(|h| h.to_string()).collect::<Vec<_>>(),
        &widths,
    );
    for cells in body {
        row(&mut out, &cells, &widths);
    }
    out
}

/// Renders scalar estimates as one table. `scale` multiplies the estimate
/// and its uncertainty columns (use 1.0 for none); p-values never scale.
pub fn render_estimates(reports: &[&EstimateReport], scale: f64) -> String {
    let body = reports
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                num(r.estimate * scale),
                num(r.std_error * scale),
                num(r.ci_lower * scale),
                num(r.ci_upper * scale),
                pval(r.p_value),
            ]
        })
        .collect();
    let mut out = table(
        &["method", "estimate", "std.error", "ci.lower", "ci.upper", "p.value"],
        body,
    );
    for r in reports {
        if let Some(warning) = &r.warning {
            let _ = writeln!(out, "note ({}): {warning}", r.method);
        }
    }
    out
}

/// Renders a fitted parameter table. `scale` multiplies estimates and their
/// uncertainty columns.
pub fn render_gmm(report: &GmmReport, scale: f64) -> String {
    let body = report
        .parameters
        .iter()
        .enumerate()
        .map(|(i, name)| {
            vec![
                name.clone(),
                num(report.estimates[i] * scale),
                num(report.std_errors[i] * scale),
                num(report.ci_lower[i] * scale),
                num(report.ci_upper[i] * scale),
                pval(report.p_values[i]),
            ]
        })
        .collect();
    let mut out = table(
        &["parameter", "estimate", "std.error", "ci.lower", "ci.upper", "p.value"],
        body,
    );
    let _ = writeln!(
        out,
        "rows {}  solver {}  objective {}  converged {}",
        report.rows,
        report.solver,
        num(report.objective),
        report.converged
    );
    if let Some(b) = report.hac_bandwidth {
        let _ = writeln!(out, "newey-west bandwidth {b}");
    }
    out
}

pub fn render_confounding(result: &ConfoundingTestResult) -> String {
    let body = vec![
        vec![
            "alpha1 (x)".to_string(),
            num(result.alpha1),
            num(result.se_alpha1),
            pval(result.p_alpha1),
        ],
        vec![
            "alpha2 (z)".to_string(),
            num(result.alpha2),
            num(result.se_alpha2),
            pval(result.p_alpha2),
        ],
    ];
    let mut out = String::from("confounding test: w ~ x + z + controls\n");
    out.push_str(&table(&["coefficient", "estimate", "std.error", "p.value"], body));
    let _ = writeln!(
        out,
        "rows {}  newey-west bandwidth {}",
        result.rows, result.hac_bandwidth
    );
    out
}

pub fn render_series(analysis: &SeriesAnalysis, scale: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "lagged design: {} rows, newey-west bandwidth {}",
        analysis.rows_used, analysis.hac_bandwidth
    );
    out.push('\n');
    let body = vec![
        vec![
            "ols".to_string(),
            num(analysis.ols_estimate * scale),
            num(analysis.ols_std_error * scale),
        ],
        vec![
            "nc".to_string(),
            num(analysis.nc_estimate * scale),
            num(analysis.nc_std_error * scale),
        ],
    ];
    out.push_str(&table(&["method", "estimate", "std.error"], body));
    out.push('\n');
    out.push_str(&render_confounding(&analysis.confounding));
    out
}

pub fn render_simulation(report: &SimulationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {}  eta {}  xi {}  n {}  replications {}  truth {}  seed {}",
        report.scenario.as_str(),
        num(report.eta),
        num(report.xi),
        report.sample_size,
        report.replications,
        num(report.truth),
        report.master_seed
    );
    if let Some(b) = report.hac_bandwidth {
        let _ = writeln!(out, "newey-west bandwidth {b}");
    }
    let dash = "-".to_string();
    let body = report
        .estimators
        .iter()
        .map(|s| {
            vec![
                s.estimator.as_str().to_string(),
                s.bias.map(num).unwrap_or_else(|| dash.clone()),
                s.empirical_sd.map(num).unwrap_or_else(|| dash.clone()),
                s.mean_std_error.map(num).unwrap_or_else(|| dash.clone()),
                s.coverage.map(|c| format!("{c:.3}")).unwrap_or_else(|| dash.clone()),
                s.failures.to_string(),
            ]
        })
        .collect();
    out.push_str(&table(
        &["estimator", "bias", "emp.sd", "mean.se", "coverage", "failures"],
        body,
    ));
    out
}

pub fn render_counterexample(report: &CounterexampleReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "two models, opposite effects, one covariance matrix of (x, y, w); n {}",
        report.sample_size
    );
    let _ = writeln!(out, "shared matrix:");
    for r in report.shared {
        let _ = writeln!(out, "  [{}, {}, {}]", num(r[0]), num(r[1]), num(r[2]));
    }
    for setting in &report.settings {
        let _ = writeln!(
            out,
            "{}: max analytic gap {}  empirical within tolerance: {}",
            setting.label,
            num(setting.max_analytic_gap),
            setting.empirical_ok
        );
    }
    let _ = writeln!(out, "consistent: {}", report.consistent);
    out
}

pub fn render_adjustment(adjustment: &BinaryAdjustment, scale: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "adjusted effect: {}", num(adjustment.ace * scale));
    let _ = writeln!(
        out,
        "bridge slopes: gamma2 {}  gamma3 {}",
        num(adjustment.gamma2),
        num(adjustment.gamma3)
    );
    out
}

pub fn render_sensitivity(result: &SensitivityResult, scale: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "effect net of the control pathway: gamma1 {}",
        num(result.gamma1 * scale)
    );
    let _ = writeln!(out, "bridge slope: gamma2 {}", num(result.gamma2));
    let _ = writeln!(
        out,
        "adjusted effect over the assumed range: [{}, {}]",
        num(result.ace_lower * scale),
        num(result.ace_upper * scale)
    );
    if let Ok(threshold) = result.explain_away_threshold() {
        let _ = writeln!(
            out,
            "control effect that would fully explain the crude association: {}",
            num(threshold)
        );
    }
    out
}
