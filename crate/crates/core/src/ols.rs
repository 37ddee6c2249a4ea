//! Least squares by Householder QR with column pivoting.
//!
//! Full-rank problems are solved by back substitution on `R`. Rank-deficient
//! problems go through a complete orthogonal decomposition
//! `A P = Q [T' 0; 0 0] Z'`, which yields the minimum-norm minimizer.

/// A Householder reflector `H = I - beta * v v'` acting on rows `offset..`.
#[derive(Debug, Clone)]
struct Reflector {
    offset: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    /// Reflector mapping `x` onto a multiple of the first unit vector.
    /// Returns the reflector and the resulting leading entry.
    fn annihilate(x: &[f64], offset: usize) -> (Self, f64) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (
                Self {
                    offset,
                    v: vec![0.0; x.len()],
                    beta: 0.0,
                },
                0.0,
            );
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|e| e * e).sum();
        let beta = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
        (Self { offset, v, beta }, alpha)
    }

    fn apply(&self, target: &mut [f64]) {
        if self.beta == 0.0 {
            return;
        }
        let seg = &mut target[self.offset..self.offset + self.v.len()];
        let dot: f64 = self.v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum();
        let scale = self.beta * dot;
        for (t, v) in seg.iter_mut().zip(&self.v) {
            *t -= scale * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    /// Coefficients in the original column order.
    pub coefficients: Vec<f64>,
    /// Numerical rank of the design.
    pub rank: usize,
    /// `y - A x`, in row order.
    pub residuals: Vec<f64>,
}

impl LeastSquaresFit {
    pub fn full_rank(&self) -> bool {
        self.rank == self.coefficients.len()
    }
}

/// Solves `min ||A x - y||` for a column-major design (`columns[j]` is the
/// j-th column). When the design is rank deficient the minimum-norm solution
/// is returned and `rank` reports the deficiency.
pub fn solve(columns: &[Vec<f64>], y: &[f64]) -> LeastSquaresFit {
    let p = columns.len();
    let m = y.len();
    debug_assert!(columns.iter().all(|c| c.len() == m));

    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let steps = m.min(p);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        // pivot on the largest remaining column norm; first index wins ties
        let mut pivot = k;
        let mut best = -1.0;
        for (j, col) in a.iter().enumerate().skip(k) {
            let norm2: f64 = col[k..].iter().map(|v| v * v).sum();
            if norm2 > best {
                best = norm2;
                pivot = j;
            }
        }
        a.swap(k, pivot);
        perm.swap(k, pivot);

        let (h, alpha) = Reflector::annihilate(&a[k][k..], k);
        a[k][k] = alpha;
        for v in &mut a[k][k + 1..] {
            *v = 0.0;
        }
        for col in a.iter_mut().skip(k + 1) {
            h.apply(col);
        }
        h.apply(&mut qty);
        diag.push(alpha.abs());
    }

    let tol = diag.first().copied().unwrap_or(0.0) * (m.max(p) as f64) * f64::EPSILON;
    let rank = diag.iter().take_while(|&&d| d > tol).count();

    let mut x_perm = vec![0.0; p];
    if rank == p {
        for i in (0..p).rev() {
            let mut s = qty[i];
            for j in i + 1..p {
                s -= a[j][i] * x_perm[j];
            }
            x_perm[i] = s / a[i][i];
        }
    } else if rank > 0 {
        // S = R[0..rank, 0..p]; factor S' = Z [T; 0] column by column.
        // st[i] holds column i of S' (= row i of S), length p.
        let mut st: Vec<Vec<f64>> = (0..rank)
            .map(|i| (0..p).map(|j| a[j][i]).collect())
            .collect();
        let mut zs = Vec::with_capacity(rank);
        for k in 0..rank {
            let (h, alpha) = Reflector::annihilate(&st[k][k..], k);
            st[k][k] = alpha;
            for v in &mut st[k][k + 1..] {
                *v = 0.0;
            }
            for col in st.iter_mut().skip(k + 1) {
                h.apply(col);
            }
            zs.push(h);
        }
        // T' w = (Q'y)[0..rank], with T'[i][j] = st[i][j] for j <= i.
        let mut w = vec![0.0; p];
        for i in 0..rank {
            let mut s = qty[i];
            for (j, wj) in w.iter().enumerate().take(i) {
                s -= st[i][j] * wj;
            }
            w[i] = s / st[i][i];
        }
        for h in zs.iter().rev() {
            h.apply(&mut w);
        }
        x_perm = w;
    }

    let mut coefficients = vec![0.0; p];
    for (k, &j) in perm.iter().enumerate() {
        coefficients[j] = x_perm[k];
    }
    let residuals = (0..m)
        .map(|i| {
            let fitted: f64 = columns
                .iter()
                .zip(&coefficients)
                .map(|(c, b)| c[i] * b)
                .sum();
            y[i] - fitted
        })
        .collect();
    LeastSquaresFit {
        coefficients,
        rank,
        residuals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn exact_line() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = solve(&[vec![1.0; 4], x], &y);
        assert!(fit.full_rank());
        assert!(close(&fit.coefficients, &[1.0, 2.0], 1e-12), "{:?}", fit);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn overdetermined_matches_closed_form() {
        // simple regression slope = cov/var
        let x = [1.0, 2.0, 4.0, 7.0, 8.0];
        let y = [2.0, 1.0, 5.0, 9.0, 8.5];
        let fit = solve(&[vec![1.0; 5], x.to_vec()], &y);
        let mx = x.iter().sum::<f64>() / 5.0;
        let my = y.iter().sum::<f64>() / 5.0;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let slope = sxy / sxx;
        assert!(close(&fit.coefficients, &[my - slope * mx, slope], 1e-12));
    }

    #[test]
    fn duplicated_column_gives_minimum_norm() {
        // y = 3x with x duplicated: min-norm splits the slope evenly
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let fit = solve(&[x.clone(), x], &y);
        assert_eq!(fit.rank, 1);
        assert!(close(&fit.coefficients, &[1.5, 1.5], 1e-12), "{:?}", fit);
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let fit = solve(&[vec![1.0; 3], vec![0.0; 3]], &[2.0, 2.0, 2.0]);
        assert_eq!(fit.rank, 1);
        assert!(close(&fit.coefficients, &[2.0, 0.0], 1e-12));
    }

    #[test]
    fn underdetermined_system() {
        // one equation, two unknowns: x1 + x2 = 2 -> min norm (1, 1)
        let fit = solve(&[vec![1.0], vec![1.0]], &[2.0]);
        assert_eq!(fit.rank, 1);
        assert!(close(&fit.coefficients, &[1.0, 1.0], 1e-12));
    }

    #[test]
    fn all_zero_design() {
        let fit = solve(&[vec![0.0; 2]], &[1.0, 2.0]);
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.coefficients, vec![0.0]);
    }
}
