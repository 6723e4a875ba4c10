//! Dense primal simplex for small linear programs of the form
//! `maximize c·x  s.t.  A x ≤ b, x ≥ 0` with `b ≥ 0`, so the origin is a
//! feasible starting vertex. Callers shift variables to reach that form.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Solves the program with Dantzig pricing, switching to Bland's rule once
/// the pivot count suggests cycling.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    let n = c.len();
    let m = a.len();
    if b.len() != m || a.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument("LP shape mismatch".into()));
    }
    if b.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "LP right-hand side must be nonnegative".into(),
        ));
    }
    // Tableau rows 0..m are constraints with slack columns n..n+m; last column is rhs.
    let width = n + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    for (i, row) in a.iter().enumerate() {
        let base = i * width;
        t[base..base + n].copy_from_slice(row);
        t[base + n + i] = 1.0;
        t[base + width - 1] = b[i].max(0.0);
    }
    let obj = m * width;
    for j in 0..n {
        t[obj + j] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let bland_after = 50 * (n + m);
    let mut pivots = 0usize;
    loop {
        let entering = if pivots < bland_after {
            let mut best = None;
            let mut most = -PIVOT_EPS;
            for j in 0..n + m {
                if t[obj + j] < most {
                    most = t[obj + j];
                    best = Some(j);
                }
            }
            best
        } else {
            (0..n + m).find(|&j| t[obj + j] < -PIVOT_EPS)
        };
        let Some(col) = entering else { break };
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let coef = t[i * width + col];
            if coef > PIVOT_EPS {
                let ratio = t[i * width + width - 1] / coef;
                let better = ratio < best_ratio - 1e-15
                    || (ratio <= best_ratio + 1e-15
                        && leave.is_some_and(|l: usize| basis[i] < basis[l]));
                if leave.is_none() || better {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return Err(Error::Lp("unbounded"));
        };
        pivot(&mut t, width, m + 1, row, col);
        basis[row] = col;
        pivots += 1;
        if pivots > 100 * bland_after {
            return Err(Error::Lp("not converging"));
        }
    }
    let mut x = vec![0.0; n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            x[var] = t[i * width + width - 1];
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        pivots,
    })
}

fn pivot(t: &mut [f64], width: usize, rows: usize, row: usize, col: usize) {
    let p = t[row * width + col];
    for v in &mut t[row * width..(row + 1) * width] {
        *v /= p;
    }
    let pivot_row: Vec<f64> = t[row * width..(row + 1) * width].to_vec();
    for r in 0..rows {
        if r == row {
            continue;
        }
        let f = t[r * width + col];
        if f != 0.0 {
            for (v, pv) in t[r * width..(r + 1) * width].iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let s = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        )
        .unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded_detected() {
        let r = maximize(&[1.0, 0.0], &[vec![-1.0, 1.0]], &[1.0]);
        assert_eq!(r, Err(Error::Lp("unbounded")));
    }

    #[test]
    fn degenerate_terminates() {
        let s = maximize(
            &[1.0, 1.0],
            &[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0]],
            &[0.0, 0.0, 0.0],
        )
        .unwrap();
        assert!(s.objective.abs() < 1e-12);
    }
}
