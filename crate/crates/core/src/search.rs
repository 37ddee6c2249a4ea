//! Exhaustive grid search over threshold assignment rules.
//!
//! A rule treats unit `i` when it is in the screening set (normally the
//! unconstrained optimum T*) and every selection variable clears its
//! threshold: `screenᵢ · Π_v 1[x_v,i >= c_v]`. One variable gives the
//! univariate rule, two the quadrant rule. Every grid point is evaluated;
//! the argmax is taken over feasible points with ties going to the
//! lexicographically smallest threshold vector.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::data::PolicyDataset;
use crate::welfare::{self, AssignmentVector, WelfareError, WelfareReport};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("unknown selection variable `{0}`")]
    UnknownVariable(String),
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
    #[error("no grid point is feasible")]
    NoFeasiblePoint,
}

impl From<WelfareError> for SearchError {
    fn from(e: WelfareError) -> Self {
        match e {
            WelfareError::LengthMismatch { tau, assign } => {
                SearchError::LengthMismatch(tau, assign)
            }
            other => SearchError::InvalidGrid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSource {
    ObservedUnique,
    Quantile(usize),
    Explicit(Vec<f64>),
}

impl FromStr for GridSource {
    type Err = SearchError;

    /// `observed` or `quantile:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "observed" {
            return Ok(GridSource::ObservedUnique);
        }
        if let Some(k) = s.strip_prefix("quantile:") {
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| SearchError::InvalidGrid(format!("bad quantile count `{k}`")))?;
            return Ok(GridSource::Quantile(k));
        }
        Err(SearchError::InvalidGrid(format!(
            "unknown grid source `{s}`"
        )))
    }
}

impl fmt::Display for GridSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSource::ObservedUnique => write!(f, "observed"),
            GridSource::Quantile(k) => write!(f, "quantile:{k}"),
            GridSource::Explicit(_) => write!(f, "explicit"),
        }
    }
}

/// Candidate thresholds for one variable, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    values: Vec<f64>,
    source: GridSource,
    /// Set when the variable is constant and the grid has a single point.
    pub degenerate: bool,
}

impl ThresholdGrid {
    pub fn explicit(values: Vec<f64>) -> Result<Self, SearchError> {
        if values.is_empty() {
            return Err(SearchError::InvalidGrid("empty grid".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SearchError::InvalidGrid("non-finite threshold".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SearchError::InvalidGrid(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            source: GridSource::Explicit(values.clone()),
            degenerate: values.len() == 1,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> &GridSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn sorted_unique(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Linear-interpolation quantile of sorted data at probability `p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Builds the candidate thresholds for `var` from its observed distribution.
pub fn build_grid(
    ds: &PolicyDataset,
    var: &str,
    source: &GridSource,
) -> Result<ThresholdGrid, SearchError> {
    let column = ds
        .numeric_column(var)
        .map_err(|_| SearchError::UnknownVariable(var.to_string()))?;
    grid_from_values(column, source)
}

pub fn grid_from_values(column: &[f64], source: &GridSource) -> Result<ThresholdGrid, SearchError> {
    let values = match source {
        GridSource::ObservedUnique => sorted_unique(column),
        GridSource::Quantile(k) => {
            if *k < 2 {
                return Err(SearchError::InvalidGrid(
                    "quantile grid needs K >= 2".into(),
                ));
            }
            let mut sorted = column.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut q: Vec<f64> = (0..*k)
                .map(|j| quantile_sorted(&sorted, j as f64 / (*k - 1) as f64))
                .collect();
            q.dedup();
            q
        }
        GridSource::Explicit(v) => return ThresholdGrid::explicit(v.clone()),
    };
    if values.is_empty() {
        return Err(SearchError::InvalidGrid("variable has no values".into()));
    }
    Ok(ThresholdGrid {
        degenerate: values.len() == 1,
        values,
        source: source.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    TotalWelfare,
    #[default]
    AverageWelfare,
}

impl Objective {
    /// Objective value of a report; absent when nobody is treated.
    pub fn value(self, report: &WelfareReport) -> Option<f64> {
        if report.n_treated == 0 {
            return None;
        }
        match self {
            Objective::TotalWelfare => Some(report.total_welfare),
            Objective::AverageWelfare => report.avg_welfare,
        }
    }
}

impl FromStr for Objective {
    type Err = SearchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "avg" | "average" | "average_welfare" => Ok(Objective::AverageWelfare),
            "total" | "total_welfare" => Ok(Objective::TotalWelfare),
            other => Err(SearchError::InvalidGrid(format!(
                "unknown objective `{other}`"
            ))),
        }
    }
}

/// Policymaker limits on how many units a rule may treat.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Constraints {
    pub min_share: Option<f64>,
    pub max_share: Option<f64>,
    pub max_treated: Option<usize>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(
        min_share: Option<f64>,
        max_share: Option<f64>,
        max_treated: Option<usize>,
    ) -> Result<Self, SearchError> {
        for s in [min_share, max_share].into_iter().flatten() {
            if !(0.0..=1.0).contains(&s) {
                return Err(SearchError::InvalidConstraints(format!(
                    "share {s} outside [0, 1]"
                )));
            }
        }
        if let (Some(lo), Some(hi)) = (min_share, max_share) {
            if lo > hi {
                return Err(SearchError::InvalidConstraints(format!(
                    "min_share {lo} exceeds max_share {hi}"
                )));
            }
        }
        Ok(Self {
            min_share,
            max_share,
            max_treated,
        })
    }

    /// A point is feasible when it treats at least one unit and satisfies
    /// every limit that is set.
    pub fn admits(&self, report: &WelfareReport) -> bool {
        report.n_treated >= 1
            && self.min_share.is_none_or(|s| report.share_treated >= s)
            && self.max_share.is_none_or(|s| report.share_treated <= s)
            && self.max_treated.is_none_or(|m| report.n_treated <= m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// One threshold per selection variable.
    pub c: Vec<f64>,
    pub report: WelfareReport,
    pub feasible: bool,
}

impl Serialize for CurvePoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("CurvePoint", 3)?;
        if self.c.len() == 1 {
            st.serialize_field("c", &self.c[0])?;
        } else {
            st.serialize_field("c", &self.c)?;
        }
        st.serialize_field("report", &self.report)?;
        st.serialize_field("feasible", &self.feasible)?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSearchResult {
    pub curve: Vec<CurvePoint>,
    pub best: Option<CurvePoint>,
    pub angle_solution: bool,
    pub selection_vars: Vec<String>,
    pub objective: Objective,
}

impl ThresholdSearchResult {
    pub fn best_or_err(&self) -> Result<&CurvePoint, SearchError> {
        self.best.as_ref().ok_or(SearchError::NoFeasiblePoint)
    }
}

/// A named selection variable's values, aligned with τ.
#[derive(Debug, Clone, Copy)]
pub struct SelectionVar<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

impl<'a> SelectionVar<'a> {
    pub fn new(name: &'a str, values: &'a [f64]) -> Self {
        Self { name, values }
    }

    pub fn from_dataset(ds: &'a PolicyDataset, name: &'a str) -> Result<Self, SearchError> {
        let values = ds
            .numeric_column(name)
            .map_err(|_| SearchError::UnknownVariable(name.to_string()))?;
        Ok(Self { name, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// `screenᵢ · Π 1[xᵢ >= c]` over every `(x, c)` pair.
pub fn assign_conjunction(
    screen: &AssignmentVector,
    rules: &[(&[f64], f64)],
) -> Result<AssignmentVector, SearchError> {
    let n = screen.len();
    if let Some((x, _)) = rules.iter().find(|(x, _)| x.len() != n) {
        return Err(SearchError::LengthMismatch(n, x.len()));
    }
    Ok(AssignmentVector::from_bools((0..n).map(|i| {
        screen.is_treated(i) && rules.iter().all(|(x, c)| x[i] >= *c)
    })))
}

pub fn assign_univariate(
    t_star: &AssignmentVector,
    x: &[f64],
    c: f64,
) -> Result<AssignmentVector, SearchError> {
    assign_conjunction(t_star, &[(x, c)])
}

pub fn assign_quadrant(
    t_star: &AssignmentVector,
    x: &[f64],
    z: &[f64],
    c_x: f64,
    c_z: f64,
) -> Result<AssignmentVector, SearchError> {
    assign_conjunction(t_star, &[(x, c_x), (z, c_z)])
}

fn check_inputs(
    tau: &[f64],
    screen: &AssignmentVector,
    vars: &[SelectionVar],
) -> Result<(), SearchError> {
    if screen.len() != tau.len() {
        return Err(SearchError::LengthMismatch(tau.len(), screen.len()));
    }
    match vars.iter().find(|v| v.values.len() != tau.len()) {
        Some(v) => Err(SearchError::LengthMismatch(tau.len(), v.values.len())),
        None => Ok(()),
    }
}

/// Threshold vector for flat index `k`; the last variable varies fastest,
/// so flat order is lexicographic order.
fn thresholds_at(grids: &[&ThresholdGrid], mut k: usize) -> Vec<f64> {
    let mut c = vec![0.0; grids.len()];
    for (slot, g) in c.iter_mut().zip(grids).rev() {
        *slot = g.values[k % g.len()];
        k /= g.len();
    }
    c
}

fn evaluate_point(
    tau: &[f64],
    screen: &AssignmentVector,
    vars: &[SelectionVar],
    c: Vec<f64>,
    w_star: f64,
    cons: &Constraints,
) -> CurvePoint {
    let rules: Vec<(&[f64], f64)> = vars.iter().zip(&c).map(|(v, &c)| (v.values, c)).collect();
    let assign = assign_conjunction(screen, &rules).expect("lengths checked");
    let report =
        welfare::actual_welfare_with_optimum(tau, &assign, w_star).expect("lengths checked");
    CurvePoint {
        feasible: cons.admits(&report),
        c,
        report,
    }
}

/// Index of the feasible point with the largest objective; first wins ties.
fn argmax(curve: &[CurvePoint], obj: Objective) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in curve.iter().enumerate() {
        if !p.feasible {
            continue;
        }
        if let Some(v) = obj.value(&p.report) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Conjunction rule over any number of selection variables. The number of
/// evaluated points is the product of the grid sizes.
#[allow(clippy::too_many_arguments)]
pub fn search_multivariate_with(
    tau: &[f64],
    screen: &AssignmentVector,
    vars: &[SelectionVar],
    grids: &[&ThresholdGrid],
    obj: Objective,
    cons: &Constraints,
    exec: Execution,
) -> Result<ThresholdSearchResult, SearchError> {
    check_inputs(tau, screen, vars)?;
    if vars.is_empty() || vars.len() != grids.len() {
        return Err(SearchError::InvalidGrid(
            "need one grid per selection variable".into(),
        ));
    }
    if grids.iter().any(|g| g.is_empty()) {
        return Err(SearchError::InvalidGrid("empty grid".into()));
    }
    let w_star = welfare::w_star(tau);
    let total: usize = grids.iter().map(|g| g.len()).product();
    let eval = |k: usize| evaluate_point(tau, screen, vars, thresholds_at(grids, k), w_star, cons);
    let curve: Vec<CurvePoint> = match exec {
        Execution::Sequential => (0..total).map(eval).collect(),
        Execution::Parallel => (0..total).into_par_iter().map(eval).collect(),
    };
    let best_idx = argmax(&curve, obj);
    let angle_solution = best_idx.is_some_and(|k| {
        let mut k = k;
        let mut at_edge = false;
        for g in grids.iter().rev() {
            let j = k % g.len();
            k /= g.len();
            at_edge |= j == 0 || j + 1 == g.len();
        }
        at_edge
    });
    Ok(ThresholdSearchResult {
        best: best_idx.map(|i| curve[i].clone()),
        curve,
        angle_solution,
        selection_vars: vars.iter().map(|v| v.name.to_string()).collect(),
        objective: obj,
    })
}

pub fn search_multivariate(
    tau: &[f64],
    screen: &AssignmentVector,
    vars: &[SelectionVar],
    grids: &[&ThresholdGrid],
    obj: Objective,
    cons: &Constraints,
) -> Result<ThresholdSearchResult, SearchError> {
    search_multivariate_with(tau, screen, vars, grids, obj, cons, Execution::default())
}

/// Best single-variable threshold `c` for the rule `T*ᵢ · 1[xᵢ >= c]`.
/// A result without `best` means no grid point is feasible; the full curve
/// is still returned.
pub fn search_univariate(
    tau: &[f64],
    t_star: &AssignmentVector,
    x: SelectionVar,
    grid: &ThresholdGrid,
    obj: Objective,
    cons: &Constraints,
) -> Result<ThresholdSearchResult, SearchError> {
    search_multivariate(tau, t_star, &[x], &[grid], obj, cons)
}

/// Best quadrant `(c_x, c_z)` over the Cartesian product of both grids.
#[allow(clippy::too_many_arguments)]
pub fn search_bivariate(
    tau: &[f64],
    t_star: &AssignmentVector,
    x: SelectionVar,
    z: SelectionVar,
    grid_x: &ThresholdGrid,
    grid_z: &ThresholdGrid,
    obj: Objective,
    cons: &Constraints,
) -> Result<ThresholdSearchResult, SearchError> {
    search_multivariate(tau, t_star, &[x, z], &[grid_x, grid_z], obj, cons)
}

/// Holds `fixed` at its threshold and sweeps `varying` over `grid`. Each row
/// carries the varying threshold as `c`. A row is marked feasible when the
/// objective is defined for it.
pub fn scenario_menu(
    tau: &[f64],
    t_star: &AssignmentVector,
    fixed: (SelectionVar, f64),
    varying: SelectionVar,
    grid: &ThresholdGrid,
    obj: Objective,
) -> Result<Vec<CurvePoint>, SearchError> {
    let (fixed_var, fixed_c) = fixed;
    if !fixed_c.is_finite() {
        return Err(SearchError::InvalidGrid(
            "fixed threshold must be finite".into(),
        ));
    }
    check_inputs(tau, t_star, &[fixed_var, varying])?;
    let w_star = welfare::w_star(tau);
    Ok(grid
        .values
        .iter()
        .map(|&c| {
            let assign =
                assign_conjunction(t_star, &[(fixed_var.values, fixed_c), (varying.values, c)])
                    .expect("lengths checked");
            let report = welfare::actual_welfare_with_optimum(tau, &assign, w_star)
                .expect("lengths checked");
            CurvePoint {
                c: vec![c],
                feasible: obj.value(&report).is_some(),
                report,
            }
        })
        .collect())
}

/// Re-marks feasibility under `cons` and returns the index of the feasible
/// argmax.
pub fn apply_constraints(
    curve: &mut [CurvePoint],
    cons: &Constraints,
    obj: Objective,
) -> Result<usize, SearchError> {
    for p in curve.iter_mut() {
        p.feasible = cons.admits(&p.report);
    }
    argmax(curve, obj).ok_or(SearchError::NoFeasiblePoint)
}
