//! Empirical welfare maximization for threshold-based policy assignment.
//!
//! The pipeline: estimate per-unit treatment effects τ(X) by regression
//! adjustment ([`cate`]), compare the welfare of the actual assignment with
//! the unconstrained optimum that treats exactly the units with τ > 0
//! ([`welfare`]), then search threshold rules on one or more selection
//! variables under treated-share and budget limits ([`search`]). The
//! [`boundary`] module traces the two-variable decision boundary of the
//! optimum, and [`cli`] wires everything into reproducible JSON/CSV outputs.

pub mod boundary;
pub mod cate;
pub mod cli;
pub mod config;
pub mod data;
pub mod numeric;
pub mod ols;
pub mod output;
pub mod search;
pub mod welfare;

pub use cate::{CateEstimates, ModelSpec, Term};
pub use data::{ColumnSchema, PolicyDataset};
pub use search::{Constraints, GridSource, Objective, ThresholdGrid, ThresholdSearchResult};
pub use welfare::{AssignmentVector, WelfareReport};
