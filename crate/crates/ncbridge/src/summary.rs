//! Effect adjustment from published risk differences alone.
//!
//! When only stratified risk differences are available (no record-level
//! data), a binary negative control outcome `w` still identifies the average
//! causal effect of a binary exposure `x`. With a linear bridge
//! `b(w, x) = g0 + g1*x + g2*w + g3*x*w` the bridge slopes are ratios of
//! risk differences of the negative control exposure `z`,
//!
//! ```text
//! g2      = RD(z -> y | x = 0) / RD(z -> w | x = 0)
//! g2 + g3 = RD(z -> y | x = 1) / RD(z -> w | x = 1)
//! ```
//!
//! and the adjusted effect subtracts the bridged contribution of `w` from
//! the crude exposure contrast. The same algebra drives a sensitivity
//! analysis in which `w` is a positive control with a known or bounded
//! effect ([`positive_control_adjust`]).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("summary field {field} is required to compute {needed_for}")]
    MissingField {
        field: &'static str,
        needed_for: &'static str,
    },
    #[error("summary field {field} must be a probability in [0, 1], got {value}")]
    InvalidProbability { field: &'static str, value: f64 },
    #[error("summary field {field} must be finite, got {value}")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{0} is zero; the adjustment is undefined")]
    ZeroDenominator(&'static str),
    #[error("line {line}: expected `key = value`, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: unknown summary key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate summary key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot parse value for {key:?} as a number")]
    BadValue { line: usize, key: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Published risk differences and the marginal shares needed to average
/// them. Every field is optional; each adjustment states which fields it
/// needs and fails with [`SummaryError::MissingField`] otherwise.
///
/// Naming: `rd_ab_given_c` is the risk difference of `a` on `b` within
/// strata of `c`, averaged over those strata unless a `0`/`1` suffix pins a
/// stratum. Risk differences may live on any outcome scale (for instance
/// cases per 100 000 person-years); probabilities must lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RiskDifferenceSummary {
    /// Effect of the exposure on the outcome, averaged over `z` strata.
    pub rd_xy_given_z: Option<f64>,
    /// Effect of the exposure on the negative control outcome, averaged
    /// over `z` strata.
    pub rd_xw_given_z: Option<f64>,
    pub rd_xw_given_z0: Option<f64>,
    pub rd_xw_given_z1: Option<f64>,
    /// Effect of the negative control exposure on the outcome, averaged
    /// over `x` strata.
    pub rd_zy_given_x: Option<f64>,
    pub rd_zy_given_x0: Option<f64>,
    pub rd_zy_given_x1: Option<f64>,
    /// Effect of the negative control exposure on the negative control
    /// outcome, averaged over `x` strata.
    pub rd_zw_given_x: Option<f64>,
    pub rd_zw_given_x0: Option<f64>,
    pub rd_zw_given_x1: Option<f64>,
    /// Marginal share of exposed units, `pr(x = 1)`.
    pub pr_x1: Option<f64>,
    /// Marginal share of the high negative control exposure, `pr(z = 1)`.
    pub pr_z1: Option<f64>,
    /// Joint shares `pr(z = 0, x = 1)` and `pr(z = 1, x = 1)`.
    pub pr_z0_x1: Option<f64>,
    pub pr_z1_x1: Option<f64>,
}

const FIELD_NAMES: [&str; 14] = [
    "rd_xy_given_z",
    "rd_xw_given_z",
    "rd_xw_given_z0",
    "rd_xw_given_z1",
    "rd_zy_given_x",
    "rd_zy_given_x0",
    "rd_zy_given_x1",
    "rd_zw_given_x",
    "rd_zw_given_x0",
    "rd_zw_given_x1",
    "pr_x1",
    "pr_z1",
    "pr_z0_x1",
    "pr_z1_x1",
];

impl RiskDifferenceSummary {
    fn field_mut(&mut self, key: &str) -> Option<&mut Option<f64>> {
        Some(match key {
            "rd_xy_given_z" => &mut self.rd_xy_given_z,
            "rd_xw_given_z" => &mut self.rd_xw_given_z,
            "rd_xw_given_z0" => &mut self.rd_xw_given_z0,
            "rd_xw_given_z1" => &mut self.rd_xw_given_z1,
            "rd_zy_given_x" => &mut self.rd_zy_given_x,
            "rd_zy_given_x0" => &mut self.rd_zy_given_x0,
            "rd_zy_given_x1" => &mut self.rd_zy_given_x1,
            "rd_zw_given_x" => &mut self.rd_zw_given_x,
            "rd_zw_given_x0" => &mut self.rd_zw_given_x0,
            "rd_zw_given_x1" => &mut self.rd_zw_given_x1,
            "pr_x1" => &mut self.pr_x1,
            "pr_z1" => &mut self.pr_z1,
            "pr_z0_x1" => &mut self.pr_z0_x1,
            "pr_z1_x1" => &mut self.pr_z1_x1,
            _ => return None,
        })
    }

    fn field(&self, key: &str) -> Option<f64> {
        match key {
            "rd_xy_given_z" => self.rd_xy_given_z,
            "rd_xw_given_z" => self.rd_xw_given_z,
            "rd_xw_given_z0" => self.rd_xw_given_z0,
            "rd_xw_given_z1" => self.rd_xw_given_z1,
            "rd_zy_given_x" => self.rd_zy_given_x,
            "rd_zy_given_x0" => self.rd_zy_given_x0,
            "rd_zy_given_x1" => self.rd_zy_given_x1,
            "rd_zw_given_x" => self.rd_zw_given_x,
            "rd_zw_given_x0" => self.rd_zw_given_x0,
            "rd_zw_given_x1" => self.rd_zw_given_x1,
            "pr_x1" => self.pr_x1,
            "pr_z1" => self.pr_z1,
            "pr_z0_x1" => self.pr_z0_x1,
            "pr_z1_x1" => self.pr_z1_x1,
            _ => None,
        }
    }

    /// Checks that present fields are finite and that probabilities lie in
    /// `[0, 1]`.
    pub fn validate(&self) -> Result<(), SummaryError> {
        for field in FIELD_NAMES {
            if let Some(value) = self.field(field) {
                if !value.is_finite() {
                    return Err(SummaryError::NonFinite { field, value });
                }
                if field.starts_with("pr_") && !(0.0..=1.0).contains(&value) {
                    return Err(SummaryError::InvalidProbability { field, value });
                }
            }
        }
        Ok(())
    }

    fn require(&self, field: &'static str, needed_for: &'static str) -> Result<f64, SummaryError> {
        self.field(field)
            .ok_or(SummaryError::MissingField { field, needed_for })
    }

    fn averaged(
        &self,
        direct: &'static str,
        stratum0: &'static str,
        stratum1: &'static str,
        share1: &'static str,
        needed_for: &'static str,
    ) -> Result<f64, SummaryError> {
        if let Some(value) = self.field(direct) {
            return Ok(value);
        }
        match (self.field(stratum0), self.field(stratum1), self.field(share1)) {
            (Some(v0), Some(v1), Some(p1)) => Ok(v0 * (1.0 - p1) + v1 * p1),
            _ => Err(SummaryError::MissingField { field: direct, needed_for }),
        }
    }

    /// `E{RD(z -> y | x)}`, from the averaged field or from both strata and
    /// `pr_x1`.
    pub fn e_rd_zy_given_x(&self, needed_for: &'static str) -> Result<f64, SummaryError> {
        self.averaged("rd_zy_given_x", "rd_zy_given_x0", "rd_zy_given_x1", "pr_x1", needed_for)
    }

    /// `E{RD(z -> w | x)}`, from the averaged field or from both strata and
    /// `pr_x1`.
    pub fn e_rd_zw_given_x(&self, needed_for: &'static str) -> Result<f64, SummaryError> {
        self.averaged("rd_zw_given_x", "rd_zw_given_x0", "rd_zw_given_x1", "pr_x1", needed_for)
    }

    /// `E{RD(x -> w | z)}`, from the averaged field or from both strata and
    /// `pr_z1`.
    pub fn e_rd_xw_given_z(&self, needed_for: &'static str) -> Result<f64, SummaryError> {
        self.averaged("rd_xw_given_z", "rd_xw_given_z0", "rd_xw_given_z1", "pr_z1", needed_for)
    }
}

/// Result of a summary-data negative control adjustment with a linear
/// bridge in `(x, w, x*w)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinaryAdjustment {
    /// Adjusted average causal effect of `x` on `y`.
    pub ace: f64,
    /// Bridge slope on `w`.
    pub gamma2: f64,
    /// Bridge slope on `x*w`; zero for the additive bridge.
    pub gamma3: f64,
}

fn ratio(num: f64, den: f64, what: &'static str) -> Result<f64, SummaryError> {
    if den == 0.0 {
        return Err(SummaryError::ZeroDenominator(what));
    }
    Ok(num / den)
}

/// Adjusts the exposure-outcome risk difference for unmeasured confounding
/// using a binary negative control outcome.
///
/// With `interaction` false the bridge is additive and needs the averaged
/// `z` risk differences; with `interaction` true the bridge slope differs by
/// exposure arm and the per-stratum fields plus the joint shares
/// `pr_z0_x1`, `pr_z1_x1` are required.
pub fn binary_nc_adjust(
    summary: &RiskDifferenceSummary,
    interaction: bool,
) -> Result<BinaryAdjustment, SummaryError> {
    summary.validate()?;
    let what = "the negative control adjustment";
    let rd_xy = summary.require("rd_xy_given_z", what)?;
    if !interaction {
        let gamma2 = ratio(
            summary.e_rd_zy_given_x(what)?,
            summary.e_rd_zw_given_x(what)?,
            "the averaged risk difference of z on w",
        )?;
        let rd_xw = summary.e_rd_xw_given_z(what)?;
        return Ok(BinaryAdjustment {
            ace: rd_xy - gamma2 * rd_xw,
            gamma2,
            gamma3: 0.0,
        });
    }
    let gamma2 = ratio(
        summary.require("rd_zy_given_x0", what)?,
        summary.require("rd_zw_given_x0", what)?,
        "the risk difference of z on w among the unexposed",
    )?;
    let slope1 = ratio(
        summary.require("rd_zy_given_x1", what)?,
        summary.require("rd_zw_given_x1", what)?,
        "the risk difference of z on w among the exposed",
    )?;
    let gamma3 = slope1 - gamma2;
    let rd_xw = summary.e_rd_xw_given_z(what)?;
    let joint = summary.require("rd_xw_given_z0", what)? * summary.require("pr_z0_x1", what)?
        + summary.require("rd_xw_given_z1", what)? * summary.require("pr_z1_x1", what)?;
    Ok(BinaryAdjustment {
        ace: rd_xy - slope1 * rd_xw + gamma3 * joint,
        gamma2,
        gamma3,
    })
}

/// Decomposition of the crude exposure contrast when `w` is a positive
/// control whose own effect is only known up to a range.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SensitivityResult {
    /// Effect of `x` on `y` net of the bridged positive control pathway.
    pub gamma1: f64,
    /// Bridge slope on `w`.
    pub gamma2: f64,
    /// Adjusted effect at the lower and upper ends of the assumed range for
    /// the effect of `x` on `w`, sorted.
    pub ace_lower: f64,
    pub ace_upper: f64,
}

impl SensitivityResult {
    /// Adjusted effect of `x` on `y` if the true effect of `x` on `w` is
    /// `ace_xw`.
    pub fn ace_at(&self, ace_xw: f64) -> f64 {
        self.gamma1 + self.gamma2 * ace_xw
    }

    /// Effect of `x` on `w` at which the adjusted effect of `x` on `y`
    /// vanishes: the point where the control pathway fully explains the
    /// crude association.
    pub fn explain_away_threshold(&self) -> Result<f64, SummaryError> {
        if self.gamma2 == 0.0 {
            return Err(SummaryError::ZeroDenominator("the bridge slope on w"));
        }
        Ok(-self.gamma1 / self.gamma2)
    }
}

/// Sensitivity analysis with a positive control outcome: the additive
/// bridge slope `gamma2` transfers any assumed effect of `x` on `w` into
/// the outcome contrast, and `ace_range` bounds that assumed effect.
pub fn positive_control_adjust(
    summary: &RiskDifferenceSummary,
    ace_range: (f64, f64),
) -> Result<SensitivityResult, SummaryError> {
    summary.validate()?;
    let what = "the positive control adjustment";
    let gamma2 = ratio(
        summary.e_rd_zy_given_x(what)?,
        summary.e_rd_zw_given_x(what)?,
        "the averaged risk difference of z on w",
    )?;
    let gamma1 = summary.require("rd_xy_given_z", what)?
        - gamma2 * summary.e_rd_xw_given_z(what)?;
    let a = gamma1 + gamma2 * ace_range.0;
    let b = gamma1 + gamma2 * ace_range.1;
    Ok(SensitivityResult {
        gamma1,
        gamma2,
        ace_lower: a.min(b),
        ace_upper: a.max(b),
    })
}

/// Parses a `key = value` summary file; `#` starts a comment and blank
/// lines are ignored. Keys are the [`RiskDifferenceSummary`] field names.
pub fn parse_summary(text: &str) -> Result<RiskDifferenceSummary, SummaryError> {
    let mut summary = RiskDifferenceSummary::default();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| SummaryError::MalformedLine {
            line,
            text: raw.trim().to_string(),
        })?;
        let key = key.trim();
        let slot = summary
            .field_mut(key)
            .ok_or_else(|| SummaryError::UnknownKey { line, key: key.to_string() })?;
        if !seen.insert(key.to_string()) {
            return Err(SummaryError::DuplicateKey { line, key: key.to_string() });
        }
        let parsed: f64 = value
            .trim()
            .parse()
            .map_err(|_| SummaryError::BadValue { line, key: key.to_string() })?;
        *slot = Some(parsed);
    }
    summary.validate()?;
    Ok(summary)
}

/// Reads a summary file from disk; see [`parse_summary`] for the format.
pub fn read_summary(path: &Path) -> Result<RiskDifferenceSummary, SummaryError> {
    parse_summary(&std::fs::read_to_string(path)?)
}

/// Renders the present fields in the same `key = value` format that
/// [`parse_summary`] reads.
pub fn write_summary(summary: &RiskDifferenceSummary) -> String {
    let mut out = String::new();
    for field in FIELD_NAMES {
        if let Some(value) = summary.field(field) {
            let _ = writeln!(out, "{field} = {value}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rate_summary() -> RiskDifferenceSummary {
        // Rates per 100 000 person-years for the outcome, shares for the
        // binary negative control outcome.
        RiskDifferenceSummary {
            rd_xy_given_z: Some(-150.0),
            rd_xw_given_z: Some(0.15),
            rd_zy_given_x: Some(-10.0),
            rd_zw_given_x: Some(0.11),
            ..Default::default()
        }
    }

    #[test]
    fn positive_control_decomposition_matches_hand_rationals() {
        let res = positive_control_adjust(&rate_summary(), (0.0, 0.15)).unwrap();
        assert_relative_eq!(res.gamma2, -1000.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(res.gamma1, -1500.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(res.ace_at(0.0), -1500.0 / 11.0, epsilon = 1e-12);
        assert_relative_eq!(res.explain_away_threshold().unwrap(), -1.5, epsilon = 1e-12);
        // gamma2 < 0, so the upper end of the range gives the lower bound.
        assert_relative_eq!(res.ace_lower, res.ace_at(0.15), epsilon = 1e-12);
        assert_relative_eq!(res.ace_upper, res.ace_at(0.0), epsilon = 1e-12);
        assert!(res.ace_lower <= res.ace_upper);
    }

    #[test]
    fn outcome_scale_equivariance() {
        let base = positive_control_adjust(&rate_summary(), (0.0, 0.2)).unwrap();
        let mut scaled_summary = rate_summary();
        scaled_summary.rd_xy_given_z = Some(-150.0 * 2.5);
        scaled_summary.rd_zy_given_x = Some(-10.0 * 2.5);
        let scaled = positive_control_adjust(&scaled_summary, (0.0, 0.2)).unwrap();
        assert_relative_eq!(scaled.gamma1, 2.5 * base.gamma1, epsilon = 1e-12);
        assert_relative_eq!(scaled.gamma2, 2.5 * base.gamma2, epsilon = 1e-12);
        assert_relative_eq!(
            scaled.explain_away_threshold().unwrap(),
            base.explain_away_threshold().unwrap(),
            epsilon = 1e-12
        );
    }

    /// Fully enumerable world with one binary latent cause `u`:
    /// `z` and `w` are valid negative controls, and the outcome mean follows
    /// the interaction bridge exactly. The adjustment must recover the
    /// enumerated average causal effect.
    struct BinaryWorld {
        pu: f64,
        pz: [f64; 2],      // pr(z = 1 | u)
        px: [[f64; 2]; 2], // pr(x = 1 | z, u), indexed [z][u]
        pw: [f64; 2],      // pr(w = 1 | u)
        py: [[f64; 2]; 2], // pr(y = 1 | x, u), indexed [x][u]
    }

    impl BinaryWorld {
        fn pr_u(&self, u: usize) -> f64 {
            if u == 1 { self.pu } else { 1.0 - self.pu }
        }

        fn pr_zxu(&self, z: usize, x: usize, u: usize) -> f64 {
            let pz = if z == 1 { self.pz[u] } else { 1.0 - self.pz[u] };
            let px = if x == 1 { self.px[z][u] } else { 1.0 - self.px[z][u] };
            self.pr_u(u) * pz * px
        }

        fn pr_zx(&self, z: usize, x: usize) -> f64 {
            self.pr_zxu(z, x, 0) + self.pr_zxu(z, x, 1)
        }

        fn mean_given_zx(&self, z: usize, x: usize, field: impl Fn(usize) -> f64) -> f64 {
            let joint = self.pr_zx(z, x);
            (self.pr_zxu(z, x, 0) * field(0) + self.pr_zxu(z, x, 1) * field(1)) / joint
        }

        fn summary(&self) -> RiskDifferenceSummary {
            let ey = |z: usize, x: usize| self.mean_given_zx(z, x, |u| self.py[x][u]);
            let ew = |z: usize, x: usize| self.mean_given_zx(z, x, |u| self.pw[u]);
            let pr_z = |z: usize| self.pr_zx(z, 0) + self.pr_zx(z, 1);
            let rd_xy_z = |z: usize| ey(z, 1) - ey(z, 0);
            let rd_xw_z = |z: usize| ew(z, 1) - ew(z, 0);
            let pr_x1 = self.pr_zx(0, 1) + self.pr_zx(1, 1);
            RiskDifferenceSummary {
                rd_xy_given_z: Some(pr_z(0) * rd_xy_z(0) + pr_z(1) * rd_xy_z(1)),
                rd_xw_given_z: Some(pr_z(0) * rd_xw_z(0) + pr_z(1) * rd_xw_z(1)),
                rd_xw_given_z0: Some(rd_xw_z(0)),
                rd_xw_given_z1: Some(rd_xw_z(1)),
                rd_zy_given_x0: Some(ey(1, 0) - ey(0, 0)),
                rd_zy_given_x1: Some(ey(1, 1) - ey(0, 1)),
                rd_zw_given_x0: Some(ew(1, 0) - ew(0, 0)),
                rd_zw_given_x1: Some(ew(1, 1) - ew(0, 1)),
                pr_x1: Some(pr_x1),
                pr_z0_x1: Some(self.pr_zx(0, 1)),
                pr_z1_x1: Some(self.pr_zx(1, 1)),
                ..Default::default()
            }
        }

        fn true_ace(&self) -> f64 {
            self.pr_u(0) * (self.py[1][0] - self.py[0][0])
                + self.pr_u(1) * (self.py[1][1] - self.py[0][1])
        }
    }

    fn interaction_world() -> BinaryWorld {
        // py follows g = (0.2, 0.15, 0.3, 0.1) with pw = (0.3, 0.7).
        BinaryWorld {
            pu: 0.4,
            pz: [0.3, 0.7],
            px: [[0.2, 0.45], [0.5, 0.75]],
            pw: [0.3, 0.7],
            py: [[0.29, 0.41], [0.47, 0.63]],
        }
    }

    #[test]
    fn enumerated_binary_world_is_recovered_exactly() {
        let world = interaction_world();
        let adj = binary_nc_adjust(&world.summary(), true).unwrap();
        assert_relative_eq!(adj.gamma2, 0.3, epsilon = 1e-12);
        assert_relative_eq!(adj.gamma3, 0.1, epsilon = 1e-12);
        assert_relative_eq!(adj.ace, world.true_ace(), epsilon = 1e-12);
        assert_relative_eq!(world.true_ace(), 0.196, epsilon = 1e-12);
    }

    #[test]
    fn additive_world_agrees_under_both_bridges() {
        // g3 = 0: py slopes on pw are equal across exposure arms.
        let world = BinaryWorld {
            pu: 0.35,
            pz: [0.4, 0.65],
            px: [[0.25, 0.5], [0.55, 0.8]],
            pw: [0.2, 0.6],
            py: [[0.3, 0.46], [0.42, 0.58]], // slope 0.4 in both arms
        };
        let mut summary = world.summary();
        summary.rd_zy_given_x = None;
        summary.rd_zw_given_x = None;
        let with_interaction = binary_nc_adjust(&summary, true).unwrap();
        let additive = binary_nc_adjust(&summary, false).unwrap();
        assert_relative_eq!(with_interaction.gamma3, 0.0, epsilon = 1e-12);
        assert_relative_eq!(with_interaction.ace, additive.ace, epsilon = 1e-12);
        assert_relative_eq!(additive.ace, world.true_ace(), epsilon = 1e-12);
    }

    #[test]
    fn averaged_fields_fall_back_to_strata() {
        let summary = RiskDifferenceSummary {
            rd_zy_given_x0: Some(2.0),
            rd_zy_given_x1: Some(4.0),
            pr_x1: Some(0.25),
            ..Default::default()
        };
        let avg = summary.e_rd_zy_given_x("a test").unwrap();
        assert_relative_eq!(avg, 0.75 * 2.0 + 0.25 * 4.0, epsilon = 1e-15);
        let missing = RiskDifferenceSummary {
            rd_zy_given_x0: Some(2.0),
            ..Default::default()
        };
        assert!(matches!(
            missing.e_rd_zy_given_x("a test"),
            Err(SummaryError::MissingField { field: "rd_zy_given_x", .. })
        ));
    }

    #[test]
    fn missing_and_degenerate_inputs_error() {
        let mut summary = rate_summary();
        summary.rd_xy_given_z = None;
        assert!(matches!(
            binary_nc_adjust(&summary, false),
            Err(SummaryError::MissingField { field: "rd_xy_given_z", .. })
        ));
        let mut summary = rate_summary();
        summary.rd_zw_given_x = Some(0.0);
        assert!(matches!(
            binary_nc_adjust(&summary, false),
            Err(SummaryError::ZeroDenominator(_))
        ));
        let degenerate = SensitivityResult {
            gamma1: 1.0,
            gamma2: 0.0,
            ace_lower: 1.0,
            ace_upper: 1.0,
        };
        assert!(degenerate.explain_away_threshold().is_err());
    }

    #[test]
    fn probability_fields_are_range_checked() {
        let summary = RiskDifferenceSummary {
            pr_x1: Some(1.2),
            ..Default::default()
        };
        assert!(matches!(
            summary.validate(),
            Err(SummaryError::InvalidProbability { field: "pr_x1", .. })
        ));
    }

    #[test]
    fn summary_file_round_trips() {
        let world = interaction_world();
        let summary = world.summary();
        let text = write_summary(&summary);
        let parsed = parse_summary(&text).unwrap();
        assert_eq!(parsed, summary);
    }

    #[test]
    fn summary_parser_reports_line_and_key() {
        let text = "rd_xy_given_z = -150\n# comment\n\nrd_xw_given_z = 0.15\n";
        let parsed = parse_summary(text).unwrap();
        assert_eq!(parsed.rd_xy_given_z, Some(-150.0));
        assert_eq!(parsed.rd_xw_given_z, Some(0.15));

        assert!(matches!(
            parse_summary("rd_xy_given_z = -150\nmystery = 1\n"),
            Err(SummaryError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            parse_summary("rd_xy_given_z = -150\nrd_xy_given_z = 2\n"),
            Err(SummaryError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            parse_summary("rd_xy_given_z = abc\n"),
            Err(SummaryError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            parse_summary("rd_xy_given_z\n"),
            Err(SummaryError::MalformedLine { line: 1, .. })
        ));
    }
}
