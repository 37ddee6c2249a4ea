//! Regression-adjustment estimates of conditional and average treatment
//! effects, plus the difference-in-means benchmark.
//!
//! Each arm gets its own OLS fit of the outcome on an intercept and the
//! declared model terms. The per-unit effect is the difference of the two arm
//! predictions, evaluated for every unit regardless of its own arm. With a
//! full set of treatment interactions this is algebraically the same as a
//! single interacted regression.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::data::{Arm, PolicyDataset};
use crate::numeric::{self, CompensatedSum};
use crate::ols;

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("model term `{0}` references an unknown covariate")]
    UnknownTerm(String),
    #[error("model term `{0}` is listed twice")]
    DuplicateTerm(String),
    #[error("cannot parse model term `{0}`")]
    BadTerm(String),
    #[error("{arm:?} arm has {have} units but the model needs at least {need}")]
    TooFewUnits { arm: Arm, have: usize, need: usize },
    #[error("{0:?} arm is empty")]
    EmptyArm(Arm),
    #[error("{0:?} arm design matrix is rank deficient")]
    RankDeficient(Arm),
}

/// One regressor: a covariate, or the square of one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Linear(String),
    Squared(String),
}

impl Term {
    pub fn covariate(&self) -> &str {
        match self {
            Term::Linear(c) | Term::Squared(c) => c,
        }
    }

    fn evaluate(&self, value: f64) -> f64 {
        match self {
            Term::Linear(_) => value,
            Term::Squared(_) => value * value,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Linear(c) => write!(f, "{c}"),
            Term::Squared(c) => write!(f, "{c}^2"),
        }
    }
}

impl FromStr for Term {
    type Err = EstimationError;

    /// `name` or `name^2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let valid_name = |n: &str| {
            !n.is_empty()
                && n.chars()
                    .all(|c| c.is_alphanumeric() || matches!(c, '_' | '.' | '-'))
        };
        match s.split_once('^') {
            None if valid_name(s) => Ok(Term::Linear(s.to_string())),
            Some((name, "2")) if valid_name(name.trim_end()) => {
                Ok(Term::Squared(name.trim_end().to_string()))
            }
            _ => Err(EstimationError::BadTerm(s.to_string())),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Ordered list of regressors (the intercept is implicit).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ModelSpec {
    terms: Vec<Term>,
}

impl ModelSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self, EstimationError> {
        for (i, t) in terms.iter().enumerate() {
            if terms[..i].contains(t) {
                return Err(EstimationError::DuplicateTerm(t.to_string()));
            }
        }
        Ok(Self { terms })
    }

    pub fn intercept_only() -> Self {
        Self::default()
    }

    /// Parses term strings such as `["re74", "age", "age^2"]`.
    pub fn parse<I, S>(terms: I) -> Result<Self, EstimationError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms = terms
            .into_iter()
            .map(|t| t.as_ref().parse())
            .collect::<Result<Vec<Term>, _>>()?;
        Self::new(terms)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn validate_against(&self, ds: &PolicyDataset) -> Result<(), EstimationError> {
        match self
            .terms
            .iter()
            .find(|t| ds.covariate(t.covariate()).is_none())
        {
            Some(t) => Err(EstimationError::UnknownTerm(t.to_string())),
            None => Ok(()),
        }
    }

    /// Design columns (intercept first) restricted to `rows`.
    fn design(&self, ds: &PolicyDataset, rows: &[usize]) -> Vec<Vec<f64>> {
        let mut cols = Vec::with_capacity(self.terms.len() + 1);
        cols.push(vec![1.0; rows.len()]);
        for t in &self.terms {
            let x = ds.covariate(t.covariate()).expect("validated term");
            cols.push(rows.iter().map(|&i| t.evaluate(x[i])).collect());
        }
        cols
    }
}

/// OLS fit of the outcome on one arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmModel {
    pub arm: Arm,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    pub rank_ok: bool,
    #[serde(skip)]
    terms: Vec<Term>,
}

impl ArmModel {
    /// Predicted outcome for unit `i` of `ds`.
    pub fn predict(&self, ds: &PolicyDataset, i: usize) -> f64 {
        let mut acc = CompensatedSum::new();
        acc.add(self.intercept);
        for (t, b) in self.terms.iter().zip(&self.coefficients) {
            let x = ds.covariate(t.covariate()).expect("validated term")[i];
            acc.add(b * t.evaluate(x));
        }
        acc.total()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }
}

fn arm_rows(ds: &PolicyDataset, arm: Arm) -> Vec<usize> {
    ds.treatment()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == arm.code())
        .map(|(i, _)| i)
        .collect()
}

/// Fits one arm by orthogonal-decomposition least squares. A collinear design
/// is not an error: the minimum-norm solution is returned with
/// `rank_ok = false`.
pub fn fit_arm(
    ds: &PolicyDataset,
    arm: Arm,
    spec: &ModelSpec,
) -> Result<ArmModel, EstimationError> {
    spec.validate_against(ds)?;
    let rows = arm_rows(ds, arm);
    let need = spec.terms.len() + 1;
    if rows.len() < need {
        return Err(EstimationError::TooFewUnits {
            arm,
            have: rows.len(),
            need,
        });
    }
    let y: Vec<f64> = rows.iter().map(|&i| ds.outcome()[i]).collect();
    let fit = ols::solve(&spec.design(ds, &rows), &y);
    let dof = rows.len().saturating_sub(fit.rank);
    let ssr: CompensatedSum = fit.residuals.iter().map(|r| r * r).collect();
    let residual_variance = if dof == 0 {
        0.0
    } else {
        ssr.total() / dof as f64
    };
    Ok(ArmModel {
        arm,
        intercept: fit.coefficients[0],
        coefficients: fit.coefficients[1..].to_vec(),
        residual_variance,
        rank_ok: fit.full_rank(),
        terms: spec.terms.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CateEstimates {
    /// Per-unit effect, all units in row order.
    pub tau: Vec<f64>,
    /// Effects of the treated units only, in row order.
    pub tau_treated: Vec<f64>,
    pub ate_ra: f64,
    pub ate_dim: f64,
    pub dim_se: f64,
}

impl CateEstimates {
    /// Mean effect over treated units.
    pub fn att_ra(&self) -> Option<f64> {
        numeric::mean(&self.tau_treated)
    }
}

/// Difference in mean outcomes between arms, with the unpooled standard error.
pub fn ate_dim(ds: &PolicyDataset) -> Result<(f64, f64), EstimationError> {
    let split =
        |arm: Arm| -> Vec<f64> { arm_rows(ds, arm).iter().map(|&i| ds.outcome()[i]).collect() };
    let y1 = split(Arm::Treated);
    let y0 = split(Arm::Control);
    let m1 = numeric::mean(&y1).ok_or(EstimationError::EmptyArm(Arm::Treated))?;
    let m0 = numeric::mean(&y0).ok_or(EstimationError::EmptyArm(Arm::Control))?;
    let v1 = numeric::sample_variance(&y1).unwrap_or(0.0);
    let v0 = numeric::sample_variance(&y0).unwrap_or(0.0);
    let se = (v1 / y1.len() as f64 + v0 / y0.len() as f64).sqrt();
    Ok((m1 - m0, se))
}

/// Fits both arms (concurrently) and differences their predictions.
pub fn estimate_cate(
    ds: &PolicyDataset,
    spec: &ModelSpec,
) -> Result<CateEstimates, EstimationError> {
    let (treated, control) = rayon::join(
        || fit_arm(ds, Arm::Treated, spec),
        || fit_arm(ds, Arm::Control, spec),
    );
    let (treated, control) = (treated?, control?);
    let tau: Vec<f64> = (0..ds.n())
        .map(|i| treated.predict(ds, i) - control.predict(ds, i))
        .collect();
    let tau_treated = tau
        .iter()
        .zip(ds.treatment())
        .filter(|(_, &t)| t == 1)
        .map(|(&v, _)| v)
        .collect();
    let ate_ra = numeric::mean(&tau).expect("non-empty dataset");
    let (ate_dim, dim_se) = ate_dim(ds)?;
    Ok(CateEstimates {
        tau,
        tau_treated,
        ate_ra,
        ate_dim,
        dim_se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` equally spaced edges from min to max of the full τ vector.
    pub edges: Vec<f64>,
    pub counts_all: Vec<usize>,
    pub counts_treated: Vec<usize>,
}

/// Histograms of τ(X) and of its treated subset on shared edges.
pub fn cate_histogram(est: &CateEstimates, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = est.tau.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = est.tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let bin_of = |v: f64| -> usize {
        if width <= 0.0 {
            0
        } else {
            (((v - lo) / width).floor() as usize).min(bins - 1)
        }
    };
    let count = |values: &[f64]| {
        let mut c = vec![0; bins];
        for &v in values {
            c[bin_of(v)] += 1;
        }
        c
    };
    Histogram {
        edges,
        counts_all: count(&est.tau),
        counts_treated: count(&est.tau_treated),
    }
}
