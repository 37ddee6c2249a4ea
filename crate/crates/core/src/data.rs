//! Loading and validating program datasets from delimited text.
//!
//! A dataset is the triple (outcome, treatment, covariates) for every unit.
//! Any empty, non-numeric or non-finite cell in a schema column is a hard
//! error; nothing is imputed and nothing is rescaled.

use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::numeric;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("column `{0}` is not present in the header")]
    MissingColumn(String),
    #[error("treatment value `{value}` at row {row} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: String },
    #[error("cell `{value}` in column `{column}` at row {row} is not a finite number")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("malformed delimited text: {0}")]
    Malformed(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

/// Names of the columns that make up a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnSchema {
    pub outcome_col: String,
    pub treatment_col: String,
    pub covariate_cols: Vec<String>,
    pub id_col: Option<String>,
}

impl ColumnSchema {
    pub fn new(
        outcome_col: impl Into<String>,
        treatment_col: impl Into<String>,
        covariate_cols: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            outcome_col: outcome_col.into(),
            treatment_col: treatment_col.into(),
            covariate_cols: covariate_cols.into_iter().map(Into::into).collect(),
            id_col: None,
        }
    }

    pub fn with_id(mut self, id_col: impl Into<String>) -> Self {
        self.id_col = Some(id_col.into());
        self
    }

    /// Outcome, treatment and covariates must be pairwise disjoint, and no
    /// covariate may be listed twice.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.outcome_col == self.treatment_col {
            return Err(DataError::InvalidSchema(format!(
                "outcome and treatment both name `{}`",
                self.outcome_col
            )));
        }
        for (i, c) in self.covariate_cols.iter().enumerate() {
            if *c == self.outcome_col || *c == self.treatment_col {
                return Err(DataError::InvalidSchema(format!(
                    "covariate `{c}` is also the outcome or treatment column"
                )));
            }
            if self.covariate_cols[..i].contains(c) {
                return Err(DataError::InvalidSchema(format!(
                    "covariate `{c}` listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// Canonical in-memory dataset. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDataset {
    schema: ColumnSchema,
    outcome: Vec<f64>,
    treatment: Vec<u8>,
    /// Column-major: one vector per covariate, in schema order.
    covariates: Vec<Vec<f64>>,
    ids: Vec<String>,
}

impl PolicyDataset {
    /// Builds a dataset from already-parsed columns, enforcing the same
    /// invariants as [`load_dataset`]. Missing ids become 1-based row numbers.
    pub fn from_columns(
        schema: ColumnSchema,
        outcome: Vec<f64>,
        treatment: Vec<u8>,
        covariates: Vec<Vec<f64>>,
        ids: Option<Vec<String>>,
    ) -> Result<Self, DataError> {
        schema.validate()?;
        let n = outcome.len();
        if n == 0 {
            return Err(DataError::EmptyDataset);
        }
        if treatment.len() != n
            || covariates.len() != schema.covariate_cols.len()
            || covariates.iter().any(|c| c.len() != n)
        {
            return Err(DataError::Malformed("column lengths disagree".into()));
        }
        if let Some((row, &t)) = treatment.iter().enumerate().find(|(_, &t)| t > 1) {
            return Err(DataError::NonBinaryTreatment {
                row: row + 1,
                value: t.to_string(),
            });
        }
        let check = |name: &str, col: &[f64]| -> Result<(), DataError> {
            match col.iter().position(|v| !v.is_finite()) {
                Some(row) => Err(DataError::NonNumericCell {
                    row: row + 1,
                    column: name.to_string(),
                    value: col[row].to_string(),
                }),
                None => Ok(()),
            }
        };
        check(&schema.outcome_col, &outcome)?;
        for (name, col) in schema.covariate_cols.iter().zip(&covariates) {
            check(name, col)?;
        }
        let ids = match ids {
            Some(ids) if ids.len() == n => ids,
            Some(_) => return Err(DataError::Malformed("id column length disagrees".into())),
            None => (1..=n).map(|i| i.to_string()).collect(),
        };
        Ok(Self {
            schema,
            outcome,
            treatment,
            covariates,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn schema(&self) -> &ColumnSchema {
        &self.schema
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.schema.covariate_cols
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.schema
            .covariate_cols
            .iter()
            .position(|c| c == name)
            .map(|i| self.covariates[i].as_slice())
    }

    /// Outcome or covariate column by name.
    pub fn numeric_column(&self, name: &str) -> Result<&[f64], DataError> {
        if name == self.schema.outcome_col {
            return Ok(&self.outcome);
        }
        self.covariate(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn treated_count(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1).count()
    }

    /// Same dataset with the outcome replaced (used for scaling/shift checks).
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self, DataError> {
        Self::from_columns(
            self.schema.clone(),
            outcome,
            self.treatment.clone(),
            self.covariates.clone(),
            Some(self.ids.clone()),
        )
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    let s = cell.trim();
    // Rust's float parser also accepts "inf"/"nan"; only plain decimal
    // notation with an optional exponent is allowed here.
    let plain = !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    if !plain {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a header-led delimited stream into a [`PolicyDataset`], preserving
/// row order. Columns not named by the schema are ignored.
pub fn load_dataset<R: Read>(
    source: R,
    schema: &ColumnSchema,
    delimiter: u8,
) -> Result<PolicyDataset, DataError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| DataError::Malformed(e.to_string()))?
        .clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let outcome_idx = find(&schema.outcome_col)?;
    let treatment_idx = find(&schema.treatment_col)?;
    let covariate_idx = schema
        .covariate_cols
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>, _>>()?;
    let id_idx = schema.id_col.as_deref().map(find).transpose()?;

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut covariates = vec![Vec::new(); covariate_idx.len()];
    let mut ids = id_idx.map(|_| Vec::new());

    for (row0, record) in reader.records().enumerate() {
        let row = row0 + 1;
        let record = record.map_err(|e| DataError::Malformed(e.to_string()))?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let numeric = |idx: usize, column: &str| {
            parse_number(cell(idx)).ok_or_else(|| DataError::NonNumericCell {
                row,
                column: column.to_string(),
                value: cell(idx).to_string(),
            })
        };
        outcome.push(numeric(outcome_idx, &schema.outcome_col)?);
        let t = numeric(treatment_idx, &schema.treatment_col)?;
        treatment.push(if t == 0.0 {
            0
        } else if t == 1.0 {
            1
        } else {
            return Err(DataError::NonBinaryTreatment {
                row,
                value: cell(treatment_idx).to_string(),
            });
        });
        for (col, (&idx, name)) in covariates
            .iter_mut()
            .zip(covariate_idx.iter().zip(&schema.covariate_cols))
        {
            col.push(numeric(idx, name)?);
        }
        if let (Some(ids), Some(idx)) = (ids.as_mut(), id_idx) {
            ids.push(cell(idx).to_string());
        }
    }
    if outcome.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    PolicyDataset::from_columns(schema.clone(), outcome, treatment, covariates, ids)
}

/// Writes the dataset back as delimited text. Floats use the shortest
/// representation that parses back to the same value, so reloading with the
/// same schema reproduces the dataset exactly.
pub fn write_dataset<W: Write>(
    ds: &PolicyDataset,
    sink: W,
    delimiter: u8,
) -> Result<(), DataError> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(sink);
    let schema = &ds.schema;
    let mut header = Vec::new();
    if let Some(id) = &schema.id_col {
        header.push(id.clone());
    }
    header.push(schema.outcome_col.clone());
    header.push(schema.treatment_col.clone());
    header.extend(schema.covariate_cols.iter().cloned());
    let err = |e: csv::Error| DataError::Malformed(e.to_string());
    w.write_record(&header).map_err(err)?;
    for i in 0..ds.n() {
        let mut rec = Vec::with_capacity(header.len());
        if schema.id_col.is_some() {
            rec.push(ds.ids[i].clone());
        }
        rec.push(format!("{:?}", ds.outcome[i]));
        rec.push(ds.treatment[i].to_string());
        rec.extend(ds.covariates.iter().map(|c| format!("{:?}", c[i])));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub fn code(self) -> u8 {
        match self {
            Arm::Treated => 1,
            Arm::Control => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub column: String,
    pub arm: Arm,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Per-arm descriptive statistics for the outcome and every covariate.
/// Statistics of an empty arm are absent.
pub fn summarize(ds: &PolicyDataset) -> Vec<ColumnSummary> {
    let mut columns: Vec<(&str, &[f64])> = vec![(&ds.schema.outcome_col, &ds.outcome)];
    columns.extend(
        ds.schema
            .covariate_cols
            .iter()
            .map(String::as_str)
            .zip(ds.covariates.iter().map(Vec::as_slice)),
    );
    let mut out = Vec::with_capacity(columns.len() * 2);
    for (name, values) in columns {
        for arm in [Arm::Treated, Arm::Control] {
            let arm_values: Vec<f64> = values
                .iter()
                .zip(&ds.treatment)
                .filter(|(_, &t)| t == arm.code())
                .map(|(&v, _)| v)
                .collect();
            out.push(ColumnSummary {
                column: name.to_string(),
                arm,
                n: arm_values.len(),
                mean: numeric::mean(&arm_values),
                sd: numeric::sample_variance(&arm_values).map(f64::sqrt),
                min: arm_values.iter().copied().reduce(f64::min),
                max: arm_values.iter().copied().reduce(f64::max),
            });
        }
    }
    out
}
