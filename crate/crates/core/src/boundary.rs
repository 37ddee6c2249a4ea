//! Decision boundary between units with T* = 1 and T* = 0 in the plane of
//! two selection variables.
//!
//! The probability surface is a k-nearest-neighbour vote on a regular grid,
//! with distances measured after standardizing both variables. The boundary
//! is the 0.5 level set of that surface, traced with marching squares.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::numeric;
use crate::welfare::AssignmentVector;

#[derive(Debug, Error, PartialEq)]
pub enum BoundaryError {
    #[error("variable `{0}` has zero variance")]
    DegenerateVariable(String),
    #[error("k = {k} must be between 1 and n = {n}")]
    BadNeighbourCount { k: usize, n: usize },
    #[error("grid resolution must be at least 2, got {0}")]
    BadResolution(usize),
    #[error("vectors have different lengths")]
    LengthMismatch,
    #[error("level must be strictly between 0 and 1, got {0}")]
    BadLevel(f64),
}

/// `prob[i][j]` is the estimate at `(x_ticks[i], z_ticks[j])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityGrid {
    pub x_ticks: Vec<f64>,
    pub z_ticks: Vec<f64>,
    pub prob: Vec<Vec<f64>>,
    pub k: usize,
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BoundaryPolyline {
    pub segments: Vec<[Point; 2]>,
}

impl BoundaryPolyline {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// `round(sqrt(n))`, at least 1.
pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().round() as usize).max(1)
}

/// `resolution` evenly spaced ticks over the data range widened by 5% per side.
fn ticks(values: &[f64], resolution: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let step = (hi - lo) / (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            if i + 1 == resolution {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect()
}

struct Standardizer {
    mean: f64,
    sd: f64,
}

impl Standardizer {
    fn fit(name: &str, values: &[f64]) -> Result<Self, BoundaryError> {
        let mean = numeric::mean(values).unwrap_or(0.0);
        let sd = numeric::sample_variance(values).unwrap_or(0.0).sqrt();
        if sd <= 0.0 || !sd.is_finite() {
            return Err(BoundaryError::DegenerateVariable(name.to_string()));
        }
        Ok(Self { mean, sd })
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }
}

/// Estimates P(T* = 1 | x, z) on a `resolution × resolution` grid as the
/// share of T* = 1 among the `k` nearest units. Distance ties go to the
/// smaller unit index.
pub fn estimate_probability_grid(
    x: &[f64],
    z: &[f64],
    t_star: &AssignmentVector,
    resolution: usize,
    k: usize,
) -> Result<ProbabilityGrid, BoundaryError> {
    estimate_probability_grid_named(("x", x), ("z", z), t_star, resolution, k)
}

pub fn estimate_probability_grid_named(
    (x_name, x): (&str, &[f64]),
    (z_name, z): (&str, &[f64]),
    t_star: &AssignmentVector,
    resolution: usize,
    k: usize,
) -> Result<ProbabilityGrid, BoundaryError> {
    let n = t_star.len();
    if x.len() != n || z.len() != n {
        return Err(BoundaryError::LengthMismatch);
    }
    if k == 0 || k > n {
        return Err(BoundaryError::BadNeighbourCount { k, n });
    }
    if resolution < 2 {
        return Err(BoundaryError::BadResolution(resolution));
    }
    let sx = Standardizer::fit(x_name, x)?;
    let sz = Standardizer::fit(z_name, z)?;
    let points: Vec<(f64, f64, bool)> = (0..n)
        .map(|i| (sx.apply(x[i]), sz.apply(z[i]), t_star.is_treated(i)))
        .collect();
    let x_ticks = ticks(x, resolution);
    let z_ticks = ticks(z, resolution);

    let vote = |gx: f64, gz: f64| -> f64 {
        let mut d: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, &(px, pz, _))| ((px - gx).powi(2) + (pz - gz).powi(2), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            d.select_nth_unstable_by(k - 1, cmp);
        }
        let ones = d[..k].iter().filter(|&&(_, i)| points[i].2).count();
        ones as f64 / k as f64
    };

    let prob = x_ticks
        .par_iter()
        .map(|&tx| {
            let gx = sx.apply(tx);
            z_ticks.iter().map(|&tz| vote(gx, sz.apply(tz))).collect()
        })
        .collect();
    Ok(ProbabilityGrid {
        x_ticks,
        z_ticks,
        prob,
        k,
    })
}

/// Crossing of `level` on the edge between two grid nodes. The endpoints are
/// always passed in increasing index order so neighbouring cells compute the
/// same point bit for bit.
fn edge_point(a: Point, va: f64, b: Point, vb: f64, level: f64) -> Point {
    let t = (level - va) / (vb - va);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

const SADDLE_TIE: f64 = 1e-12;

/// Marching squares on the probability surface. Saddle cells are joined
/// according to the mean of their four corners.
pub fn extract_boundary(
    grid: &ProbabilityGrid,
    level: f64,
) -> Result<BoundaryPolyline, BoundaryError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BoundaryError::BadLevel(level));
    }
    let nx = grid.x_ticks.len();
    let nz = grid.z_ticks.len();
    let mut segments = Vec::new();
    for i in 0..nx.saturating_sub(1) {
        for j in 0..nz.saturating_sub(1) {
            let p =
                |di: usize, dj: usize| -> Point { [grid.x_ticks[i + di], grid.z_ticks[j + dj]] };
            let v = |di: usize, dj: usize| grid.prob[i + di][j + dj];
            // corners counter-clockwise: 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1)
            let corners = [v(0, 0), v(1, 0), v(1, 1), v(0, 1)];
            let case = corners
                .iter()
                .enumerate()
                .fold(0u8, |acc, (b, &c)| acc | (u8::from(c >= level) << b));
            if case == 0 || case == 15 {
                continue;
            }
            // edges: bottom (0-1), right (1-2), top (3-2), left (0-3)
            let bottom = || edge_point(p(0, 0), v(0, 0), p(1, 0), v(1, 0), level);
            let right = || edge_point(p(1, 0), v(1, 0), p(1, 1), v(1, 1), level);
            let top = || edge_point(p(0, 1), v(0, 1), p(1, 1), v(1, 1), level);
            let left = || edge_point(p(0, 0), v(0, 0), p(0, 1), v(0, 1), level);
            let mean = corners.iter().sum::<f64>() / 4.0;
            // a cell mean on the level itself always cuts off corners 0 and 2,
            // so complementing the surface yields the same segments
            let tie = (mean - level).abs() <= SADDLE_TIE;
            let centre_high = mean >= level;
            match case {
                1 | 14 => segments.push([bottom(), left()]),
                2 | 13 => segments.push([bottom(), right()]),
                3 | 12 => segments.push([left(), right()]),
                4 | 11 => segments.push([right(), top()]),
                6 | 9 => segments.push([bottom(), top()]),
                7 | 8 => segments.push([left(), top()]),
                5 | 10 => {
                    // case 5: corners 0 and 2 high; case 10: corners 1 and 3 high
                    let cut_02 = tie || (case == 5) != centre_high;
                    if cut_02 {
                        segments.push([bottom(), left()]);
                        segments.push([right(), top()]);
                    } else {
                        segments.push([bottom(), right()]);
                        segments.push([left(), top()]);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    Ok(BoundaryPolyline { segments })
}
