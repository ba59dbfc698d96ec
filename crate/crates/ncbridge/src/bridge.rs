//! Confounding bridge functions, instrument maps and stacked moments.
//!
//! A bridge function `b(w, v, x; gamma)` plays the role of the outcome
//! regression in a double negative control design: the residual `y - b` is
//! orthogonal to any function of `(x, v, z)` when the bridge is correctly
//! specified. Pairing a bridge with an instrument vector `q(x, v, z)` of at
//! least equal dimension yields the estimating function
//!
//! ```text
//! h(d; theta) = [ (y - b(w, v, x; gamma)) * q(x, v, z) ]
//!               [ delta - { b(w, v, x1; gamma) - b(w, v, x0; gamma) } ]
//! ```
//!
//! where the optional second block carries the average causal effect `delta`
//! for a chosen exposure contrast `(x1, x0)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::NCDataset;

/// Errors from bridge and moment specification.
#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("a feature list must contain at least one term")]
    EmptyTerms,
    #[error("feature list has {terms} terms but gamma has length {gamma}")]
    GammaDimension { terms: usize, gamma: usize },
    #[error("term `{term}` is not allowed in {place} features")]
    ForbiddenTerm { term: String, place: &'static str },
    #[error("under-identified: {moments} moment rows for {parameters} parameters")]
    UnderIdentified { moments: usize, parameters: usize },
    #[error("feature term references covariate v{index} but the dataset has {available} covariate column(s)")]
    CovariateIndex { index: usize, available: usize },
    #[error("theta has length {got}, expected {expected}")]
    ThetaDimension { expected: usize, got: usize },
    #[error("theta contains a non-finite entry")]
    NonFiniteTheta,
    #[error("unknown builtin spec `{0}`; available: {}", builtin_names().join(", "))]
    UnknownBuiltin(String),
    #[error("cannot parse feature term `{0}`")]
    UnknownTerm(String),
    #[error("a custom bridge function has no serializable feature list")]
    CustomNotSerializable,
}

/// A single feature term: a raw variable or an exposure interaction.
///
/// `V(j)` indexes the j-th covariate column of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Intercept,
    X,
    W,
    Z,
    V(usize),
    XV(usize),
    XW,
    XZ,
}

impl Term {
    fn eval(self, x: f64, w: f64, z: f64, v: &DMatrix<f64>, row: usize) -> f64 {
        match self {
            Term::Intercept => 1.0,
            Term::X => x,
            Term::W => w,
            Term::Z => z,
            Term::V(j) => v[(row, j)],
            Term::XV(j) => x * v[(row, j)],
            Term::XW => x * w,
            Term::XZ => x * z,
        }
    }

    fn v_index(self) -> Option<usize> {
        match self {
            Term::V(j) | Term::XV(j) => Some(j),
            _ => None,
        }
    }

    fn uses_w(self) -> bool {
        matches!(self, Term::W | Term::XW)
    }

    fn uses_z(self) -> bool {
        matches!(self, Term::Z | Term::XZ)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::X => write!(f, "x"),
            Term::W => write!(f, "w"),
            Term::Z => write!(f, "z"),
            Term::V(j) => write!(f, "v{j}"),
            Term::XV(j) => write!(f, "x*v{j}"),
            Term::XW => write!(f, "x*w"),
            Term::XZ => write!(f, "x*z"),
        }
    }
}

impl FromStr for Term {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let parse_v = |body: &str| -> Option<usize> {
            body.strip_prefix('v')
                .and_then(|idx| idx.parse::<usize>().ok())
        };
        match t {
            "1" | "intercept" => return Ok(Term::Intercept),
            "x" => return Ok(Term::X),
            "w" => return Ok(Term::W),
            "z" => return Ok(Term::Z),
            "x*w" => return Ok(Term::XW),
            "x*z" => return Ok(Term::XZ),
            _ => {}
        }
        if let Some(j) = parse_v(t) {
            return Ok(Term::V(j));
        }
        if let Some(rest) = t.strip_prefix("x*") {
            if let Some(j) = parse_v(rest) {
                return Ok(Term::XV(j));
            }
        }
        Err(BridgeError::UnknownTerm(t.to_string()))
    }
}

/// Parametric form of a bridge function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeKind {
    /// `b = phi' gamma`
    Linear,
    /// `b = exp(phi' gamma)`, a multiplicative bridge on the log scale.
    Multiplicative,
}

type CustomFn = dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum BridgeRepr {
    Parametric { kind: BridgeKind, terms: Vec<Term> },
    /// User hook `f(w, v_row, x, gamma)`; differentiated numerically.
    Custom { eval: Arc<CustomFn> },
}

/// A confounding bridge function with its current parameter vector.
#[derive(Clone)]
pub struct BridgeModel {
    repr: BridgeRepr,
    gamma: DVector<f64>,
}

impl fmt::Debug for BridgeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            BridgeRepr::Parametric { kind, terms } => f
                .debug_struct("BridgeModel")
                .field("kind", kind)
                .field(
                    "terms",
                    &terms.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                )
                .field("gamma", &self.gamma.as_slice())
                .finish(),
            BridgeRepr::Custom { .. } => f
                .debug_struct("BridgeModel")
                .field("kind", &"custom")
                .field("gamma", &self.gamma.as_slice())
                .finish(),
        }
    }
}

fn check_terms(
    terms: &[Term],
    gamma_len: usize,
    place: &'static str,
    forbid_w: bool,
    forbid_z: bool,
) -> Result<(), BridgeError> {
    if terms.is_empty() {
        return Err(BridgeError::EmptyTerms);
    }
    if terms.len() != gamma_len {
        return Err(BridgeError::GammaDimension {
            terms: terms.len(),
            gamma: gamma_len,
        });
    }
    for t in terms {
        if (forbid_w && t.uses_w()) || (forbid_z && t.uses_z()) {
            return Err(BridgeError::ForbiddenTerm {
                term: t.to_string(),
                place,
            });
        }
    }
    Ok(())
}

impl BridgeModel {
    /// Linear bridge `b = phi(w, v, x)' gamma`. Instrument-side terms
    /// (`z`, `x*z`) are rejected.
    pub fn linear(terms: Vec<Term>, gamma: DVector<f64>) -> Result<Self, BridgeError> {
        check_terms(&terms, gamma.len(), "bridge", false, true)?;
        Ok(Self {
            repr: BridgeRepr::Parametric {
                kind: BridgeKind::Linear,
                terms,
            },
            gamma,
        })
    }

    /// Multiplicative bridge `b = exp(phi(w, v, x)' gamma)`.
    pub fn multiplicative(terms: Vec<Term>, gamma: DVector<f64>) -> Result<Self, BridgeError> {
        check_terms(&terms, gamma.len(), "bridge", false, true)?;
        Ok(Self {
            repr: BridgeRepr::Parametric {
                kind: BridgeKind::Multiplicative,
                terms,
            },
            gamma,
        })
    }

    /// Arbitrary bridge `f(w, v_row, x, gamma)`. No analytic derivatives are
    /// available, so fits fall back to numerical differentiation.
    pub fn custom<F>(gamma: DVector<f64>, f: F) -> Self
    where
        F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            repr: BridgeRepr::Custom { eval: Arc::new(f) },
            gamma,
        }
    }

    /// Parameter dimension `d_gamma`.
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    /// Same bridge with a new parameter vector of identical length.
    pub fn with_gamma(&self, gamma: DVector<f64>) -> Result<Self, BridgeError> {
        if gamma.len() != self.gamma.len() {
            return Err(BridgeError::GammaDimension {
                terms: self.gamma.len(),
                gamma: gamma.len(),
            });
        }
        Ok(Self {
            repr: self.repr.clone(),
            gamma,
        })
    }

    pub fn kind(&self) -> Option<BridgeKind> {
        match &self.repr {
            BridgeRepr::Parametric { kind, .. } => Some(*kind),
            BridgeRepr::Custom { .. } => None,
        }
    }

    /// True for a linear-in-parameters bridge; such specs admit an exact
    /// linear GMM solve and an analytic Jacobian.
    pub fn is_linear(&self) -> bool {
        matches!(
            self.repr,
            BridgeRepr::Parametric {
                kind: BridgeKind::Linear,
                ..
            }
        )
    }

    pub fn terms(&self) -> Option<&[Term]> {
        match &self.repr {
            BridgeRepr::Parametric { terms, .. } => Some(terms),
            BridgeRepr::Custom { .. } => None,
        }
    }

    /// Feature vector `phi(w, v_row, x)` for parametric bridges.
    pub fn features(&self, x: f64, w: f64, v: &DMatrix<f64>, row: usize) -> Option<DVector<f64>> {
        match &self.repr {
            BridgeRepr::Parametric { terms, .. } => Some(DVector::from_iterator(
                terms.len(),
                terms.iter().map(|t| t.eval(x, w, f64::NAN, v, row)),
            )),
            BridgeRepr::Custom { .. } => None,
        }
    }

    /// Evaluates the bridge at row `row` of the covariate matrix with an
    /// explicit parameter slice (used inside fits, where gamma varies).
    pub fn evaluate_at(
        &self,
        x: f64,
        w: f64,
        v: &DMatrix<f64>,
        row: usize,
        gamma: &[f64],
    ) -> f64 {
        match &self.repr {
            BridgeRepr::Parametric { kind, terms } => {
                let mut lin = 0.0;
                for (t, g) in terms.iter().zip(gamma) {
                    lin += t.eval(x, w, f64::NAN, v, row) * g;
                }
                match kind {
                    BridgeKind::Linear => lin,
                    BridgeKind::Multiplicative => lin.exp(),
                }
            }
            BridgeRepr::Custom { eval } => {
                let v_row: Vec<f64> = (0..v.ncols()).map(|j| v[(row, j)]).collect();
                eval(w, &v_row, x, gamma)
            }
        }
    }

    /// Evaluates at the stored gamma.
    pub fn evaluate(&self, x: f64, w: f64, v: &DMatrix<f64>, row: usize) -> f64 {
        self.evaluate_at(x, w, v, row, self.gamma.as_slice())
    }

    fn max_v_index(&self) -> Option<usize> {
        match &self.repr {
            BridgeRepr::Parametric { terms, .. } => {
                terms.iter().filter_map(|t| t.v_index()).max()
            }
            BridgeRepr::Custom { .. } => None,
        }
    }
}

/// Instrument vector `q(x, v, z)` built from feature terms. Outcome-side
/// terms (`w`, `x*w`) are rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentMap {
    terms: Vec<Term>,
}

impl InstrumentMap {
    pub fn new(terms: Vec<Term>) -> Result<Self, BridgeError> {
        check_terms(&terms, terms.len(), "instrument", true, false)?;
        Ok(Self { terms })
    }

    /// Instrument dimension `d_q`.
    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Feature vector `q(x, v_row, z)`.
    pub fn features(&self, x: f64, z: f64, v: &DMatrix<f64>, row: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|t| t.eval(x, f64::NAN, z, v, row)),
        )
    }

    fn max_v_index(&self) -> Option<usize> {
        self.terms.iter().filter_map(|t| t.v_index()).max()
    }
}

/// A bridge paired with instruments and an optional exposure contrast.
///
/// With a contrast `(x1, x0)` the parameter vector is `theta = (gamma, delta)`
/// and the stacked moments gain the causal-effect row; without one,
/// `theta = gamma`.
#[derive(Debug, Clone)]
pub struct MomentSpec {
    pub bridge: BridgeModel,
    pub instruments: InstrumentMap,
    pub contrast: Option<(f64, f64)>,
}

impl MomentSpec {
    pub fn new(
        bridge: BridgeModel,
        instruments: InstrumentMap,
        contrast: Option<(f64, f64)>,
    ) -> Result<Self, BridgeError> {
        if instruments.dim() < bridge.dim() {
            return Err(BridgeError::UnderIdentified {
                moments: instruments.dim(),
                parameters: bridge.dim(),
            });
        }
        Ok(Self {
            bridge,
            instruments,
            contrast,
        })
    }

    /// Length of `theta`.
    pub fn theta_dim(&self) -> usize {
        self.bridge.dim() + usize::from(self.contrast.is_some())
    }

    /// Number of stacked moment rows.
    pub fn moment_dim(&self) -> usize {
        self.instruments.dim() + usize::from(self.contrast.is_some())
    }

    /// Index of the causal-effect entry of `theta`, when a contrast is set.
    pub fn delta_index(&self) -> Option<usize> {
        self.contrast.map(|_| self.bridge.dim())
    }

    /// Checks that every covariate index referenced by a term exists in the
    /// dataset and that `theta` has the right length and finite entries.
    pub fn validate(&self, data: &NCDataset, theta: &DVector<f64>) -> Result<(), BridgeError> {
        if theta.len() != self.theta_dim() {
            return Err(BridgeError::ThetaDimension {
                expected: self.theta_dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(BridgeError::NonFiniteTheta);
        }
        let available = data.covariate_count();
        let max_idx = self
            .bridge
            .max_v_index()
            .into_iter()
            .chain(self.instruments.max_v_index())
            .max();
        if let Some(idx) = max_idx {
            if idx >= available {
                return Err(BridgeError::CovariateIndex {
                    index: idx,
                    available,
                });
            }
        }
        Ok(())
    }
}

/// Per-unit stacked moments: row `i` holds `h(d_i; theta)`.
///
/// The first `d_q` columns are `(y_i - b_i) * q_i`; with a contrast the last
/// column is `delta - { b(w_i, v_i, x1) - b(w_i, v_i, x0) }`.
pub fn moment_function(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, BridgeError> {
    spec.validate(data, theta)?;
    let n = data.len();
    let dq = spec.instruments.dim();
    let m = spec.moment_dim();
    let gamma = &theta.as_slice()[..spec.bridge.dim()];
    let mut out = DMatrix::zeros(n, m);
    let v = data.v();
    for i in 0..n {
        let (x, y, z, w) = (data.x()[i], data.y()[i], data.z()[i], data.w()[i]);
        let resid = y - spec.bridge.evaluate_at(x, w, v, i, gamma);
        let q = spec.instruments.features(x, z, v, i);
        for j in 0..dq {
            out[(i, j)] = resid * q[j];
        }
        if let Some((x1, x0)) = spec.contrast {
            let delta = theta[spec.bridge.dim()];
            let jump = spec.bridge.evaluate_at(x1, w, v, i, gamma)
                - spec.bridge.evaluate_at(x0, w, v, i, gamma);
            out[(i, m - 1)] = delta - jump;
        }
    }
    Ok(out)
}

/// Column means of [`moment_function`]: the sample moment vector `m_n(theta)`.
pub fn mean_moments(
    spec: &MomentSpec,
    data: &NCDataset,
    theta: &DVector<f64>,
) -> Result<DVector<f64>, BridgeError> {
    let h = moment_function(spec, data, theta)?;
    let n = h.nrows() as f64;
    Ok(DVector::from_iterator(
        h.ncols(),
        h.column_iter().map(|c| c.sum() / n),
    ))
}

/// Names of the builtin bridge/instrument pairings.
pub fn builtin_names() -> Vec<&'static str> {
    vec![
        "binary_interaction",
        "linear_additive",
        "timeseries_lag",
        "structural",
    ]
}

/// Builtin bridge/instrument pairs.
///
/// * `binary_interaction`: `b = (1, x, v0, w, x*v0, x*w) gamma` with
///   instruments `(1, x, v0, z, x*v0, x*z)`; suits a binary exposure with one
///   covariate and exposure-confounder interaction.
/// * `linear_additive`: `b = (1, x, v0, w) gamma`, instruments
///   `(1, x, v0, z)`.
/// * `timeseries_lag`: `b = (1, x, v0, v1, v2, w) gamma`, instruments
///   `(1, x, v0, v1, v2, z)`; matches the lagged-dataset covariate layout
///   (lagged exposure, current covariate, lagged covariate).
/// * `structural`: `b = (1, x, w) gamma`, instruments `(1, x, z)`.
pub fn builtin_bridges(name: &str) -> Result<(BridgeModel, InstrumentMap), BridgeError> {
    use Term::*;
    let (b_terms, q_terms): (Vec<Term>, Vec<Term>) = match name {
        "binary_interaction" => (
            vec![Intercept, X, V(0), W, XV(0), XW],
            vec![Intercept, X, V(0), Z, XV(0), XZ],
        ),
        "linear_additive" => (vec![Intercept, X, V(0), W], vec![Intercept, X, V(0), Z]),
        "timeseries_lag" => (
            vec![Intercept, X, V(0), V(1), V(2), W],
            vec![Intercept, X, V(0), V(1), V(2), Z],
        ),
        "structural" => (vec![Intercept, X, W], vec![Intercept, X, Z]),
        other => return Err(BridgeError::UnknownBuiltin(other.to_string())),
    };
    let gamma = DVector::zeros(b_terms.len());
    Ok((
        BridgeModel::linear(b_terms, gamma)?,
        InstrumentMap::new(q_terms)?,
    ))
}

/// Serializable description of a moment specification (parametric bridges
/// only). The JSON shape is
/// `{"kind": "linear", "bridge": ["1","x","w"], "instruments": ["1","x","z"],
/// "contrast": [1.0, 0.0]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MomentConfig {
    pub kind: String,
    pub bridge: Vec<String>,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub contrast: Option<(f64, f64)>,
}

impl MomentConfig {
    pub fn to_spec(&self) -> Result<MomentSpec, BridgeError> {
        let b_terms: Vec<Term> = self
            .bridge
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?;
        let q_terms: Vec<Term> = self
            .instruments
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?;
        let gamma = DVector::zeros(b_terms.len());
        let bridge = match self.kind.as_str() {
            "linear" => BridgeModel::linear(b_terms, gamma)?,
            "multiplicative" => BridgeModel::multiplicative(b_terms, gamma)?,
            other => return Err(BridgeError::UnknownBuiltin(other.to_string())),
        };
        MomentSpec::new(bridge, InstrumentMap::new(q_terms)?, self.contrast)
    }

    pub fn from_spec(spec: &MomentSpec) -> Result<Self, BridgeError> {
        let terms = spec.bridge.terms().ok_or(BridgeError::CustomNotSerializable)?;
        let kind = match spec.bridge.kind() {
            Some(BridgeKind::Linear) => "linear",
            Some(BridgeKind::Multiplicative) => "multiplicative",
            None => return Err(BridgeError::CustomNotSerializable),
        };
        Ok(Self {
            kind: kind.to_string(),
            bridge: terms.iter().map(|t| t.to_string()).collect(),
            instruments: spec.instruments.terms().iter().map(|t| t.to_string()).collect(),
            contrast: spec.contrast,
        })
    }
}
