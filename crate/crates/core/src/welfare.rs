//! Welfare of an assignment, the unconstrained optimum, regret, and the
//! split of a rule's per-beneficiary effect into a design-free part and a
//! selection part.

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::numeric::CompensatedSum;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WelfareError {
    #[error("assignment has {assign} entries but tau has {tau}")]
    LengthMismatch { tau: usize, assign: usize },
    #[error("assignment value {value} at position {index} is not 0 or 1")]
    NonBinary { index: usize, value: u8 },
    #[error("assignment treats no units")]
    NoTreatedUnits,
}

/// A 0/1 treatment decision per unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentVector(Vec<u8>);

impl AssignmentVector {
    pub fn new(assign: Vec<u8>) -> Result<Self, WelfareError> {
        if let Some((index, &value)) = assign.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(WelfareError::NonBinary { index, value });
        }
        Ok(Self(assign))
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(flags: I) -> Self {
        Self(flags.into_iter().map(u8::from).collect())
    }

    pub fn all(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn none(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn n_treated(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }
}

impl Serialize for AssignmentVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelfareReport {
    pub total_welfare: f64,
    /// Absent when nobody is treated.
    pub avg_welfare: Option<f64>,
    pub n_treated: usize,
    pub share_treated: f64,
    pub w_star: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectDecomposition {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn check_len(tau: &[f64], assign: &AssignmentVector) -> Result<(), WelfareError> {
    if tau.len() == assign.len() {
        Ok(())
    } else {
        Err(WelfareError::LengthMismatch {
            tau: tau.len(),
            assign: assign.len(),
        })
    }
}

/// Σ assignᵢ·τᵢ in row order with compensated summation.
pub fn total_welfare(tau: &[f64], assign: &AssignmentVector) -> Result<f64, WelfareError> {
    check_len(tau, assign)?;
    Ok(tau
        .iter()
        .zip(assign.as_slice())
        .filter(|(_, &a)| a == 1)
        .map(|(&t, _)| t)
        .collect::<CompensatedSum>()
        .total())
}

/// Treat exactly the units with a strictly positive effect.
pub fn optimal_assignment(tau: &[f64]) -> AssignmentVector {
    AssignmentVector::from_bools(tau.iter().map(|&t| t > 0.0))
}

/// Welfare of the unconstrained optimum.
pub fn w_star(tau: &[f64]) -> f64 {
    total_welfare(tau, &optimal_assignment(tau)).expect("same length")
}

/// Full report for `assign`, computing W* from `tau`.
pub fn actual_welfare(
    tau: &[f64],
    assign: &AssignmentVector,
) -> Result<WelfareReport, WelfareError> {
    actual_welfare_with_optimum(tau, assign, w_star(tau))
}

/// As [`actual_welfare`] with a precomputed W*, for callers that evaluate many
/// assignments against the same τ.
pub fn actual_welfare_with_optimum(
    tau: &[f64],
    assign: &AssignmentVector,
    w_star: f64,
) -> Result<WelfareReport, WelfareError> {
    let total = total_welfare(tau, assign)?;
    let n_treated = assign.n_treated();
    Ok(WelfareReport {
        total_welfare: total,
        avg_welfare: (n_treated > 0).then(|| total / n_treated as f64),
        n_treated,
        share_treated: if tau.is_empty() {
            0.0
        } else {
            n_treated as f64 / tau.len() as f64
        },
        w_star,
        regret: w_star - total,
    })
}

pub fn regret(tau: &[f64], assign: &AssignmentVector) -> Result<f64, WelfareError> {
    Ok(actual_welfare(tau, assign)?.regret)
}

/// `gamma` is the average welfare per treated unit under `assign`;
/// `beta = gamma - alpha` is what the selection adds over `alpha`. The stored
/// `gamma` is recomposed as `alpha + beta`, so the identity holds bit for bit.
pub fn decompose_effect(
    tau: &[f64],
    assign: &AssignmentVector,
    alpha: f64,
) -> Result<EffectDecomposition, WelfareError> {
    let report = actual_welfare(tau, assign)?;
    let avg = report.avg_welfare.ok_or(WelfareError::NoTreatedUnits)?;
    let beta = avg - alpha;
    Ok(EffectDecomposition {
        gamma: alpha + beta,
        alpha,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAU: [f64; 6] = [9.0, -4.0, 5.0, 6.0, -2.0, 6.0];

    fn assign(v: &[u8]) -> AssignmentVector {
        AssignmentVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn table_one() {
        let actual = assign(&[1, 1, 1, 0, 0, 0]);
        let r = actual_welfare(&TAU, &actual).unwrap();
        assert_eq!(r.total_welfare, 10.0);
        assert_eq!(r.w_star, 26.0);
        assert_eq!(r.regret, 16.0);
        assert_eq!(r.n_treated, 3);
        assert_eq!(r.share_treated, 0.5);
        assert_eq!(optimal_assignment(&TAU), assign(&[1, 0, 1, 1, 0, 1]));
        let r = actual_welfare(&TAU, &assign(&[1, 0, 1, 1, 0, 1])).unwrap();
        assert_eq!(r.total_welfare, 26.0);
        assert_eq!(r.regret, 0.0);
    }

    #[test]
    fn nobody_treated() {
        let r = actual_welfare(&TAU, &AssignmentVector::none(6)).unwrap();
        assert_eq!(r.total_welfare, 0.0);
        assert_eq!(r.avg_welfare, None);
        assert_eq!(
            decompose_effect(&TAU, &AssignmentVector::none(6), 1.0),
            Err(WelfareError::NoTreatedUnits)
        );
    }

    #[test]
    fn optimal_assignment_edges() {
        assert_eq!(optimal_assignment(&[-1.0, -2.0]), assign(&[0, 0]));
        assert_eq!(w_star(&[-1.0, -2.0]), 0.0);
        assert_eq!(optimal_assignment(&[0.0]), assign(&[0]));
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret(&TAU, &assign(&[1, 1, 1, 0, 0, 0])).unwrap(), 16.0);
        assert_eq!(regret(&TAU, &optimal_assignment(&TAU)).unwrap(), 0.0);
        assert_eq!(regret(&[1.0, 1.0], &assign(&[0, 0])).unwrap(), 2.0);
        assert_eq!(
            regret(&[1.0], &assign(&[0, 0])),
            Err(WelfareError::LengthMismatch { tau: 1, assign: 2 })
        );
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose_effect(&[2.0, 4.0], &assign(&[0, 1]), 3.0).unwrap();
        assert_eq!((d.gamma, d.alpha, d.beta), (4.0, 3.0, 1.0));
        let mean = TAU.iter().sum::<f64>() / 6.0;
        let d = decompose_effect(&TAU, &AssignmentVector::all(6), mean).unwrap();
        assert!(d.beta.abs() < 1e-12);
    }

    #[test]
    fn non_binary_assignment_rejected() {
        assert_eq!(
            AssignmentVector::new(vec![0, 2]),
            Err(WelfareError::NonBinary { index: 1, value: 2 })
        );
    }

    #[test]
    fn report_json_shape() {
        let r = actual_welfare(&TAU, &AssignmentVector::none(6)).unwrap();
        let v = serde_json::to_value(r).unwrap();
        assert!(v["avg_welfare"].is_null());
        assert_eq!(v["w_star"], 26.0);
    }
}
