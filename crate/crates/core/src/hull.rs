//! Convex-hull and cone membership of sampled vectors via non-negative least
//! squares (Lawson-Hanson active set).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

/// Solves `min |A x - b|` subject to `x >= 0`. `columns` holds the columns of
/// `A`, each of length `b.len()`. Returns the minimiser and the residual norm.
pub fn nnls(columns: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, f64) {
    let rows = b.len();
    let ncols = columns.len();
    let mut x = vec![0.0; ncols];
    let mut passive = vec![false; ncols];
    let tol = 1e-13 * (1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max));
    let max_outer = 3 * (rows + 1) + 30;

    let residual = |x: &[f64]| -> Vec<f64> {
        let mut r = b.to_vec();
        for (col, &xi) in columns.iter().zip(x) {
            if xi != 0.0 {
                for (ri, ci) in r.iter_mut().zip(col) {
                    *ri -= xi * ci;
                }
            }
        }
        r
    };

    for _ in 0..max_outer {
        let r = residual(&x);
        let mut best = None;
        let mut best_w = tol;
        for (j, col) in columns.iter().enumerate() {
            if passive[j] {
                continue;
            }
            let w: f64 = col.iter().zip(&r).map(|(c, ri)| c * ri).sum();
            if w > best_w {
                best_w = w;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        passive[j] = true;

        for _ in 0..(ncols + 1) {
            let idx: Vec<usize> = (0..ncols).filter(|&i| passive[i]).collect();
            let s = solve_passive(columns, b, &idx);
            if s.iter().all(|&v| v > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = s[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if s[k] <= 0.0 {
                    let a = x[i] / (x[i] - s[k]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (s[k] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let r = residual(&x);
    let res = libm::sqrt(r.iter().map(|v| v * v).sum());
    (x, res)
}

fn solve_passive(columns: &[Vec<f64>], b: &[f64], idx: &[usize]) -> Vec<f64> {
    let rows = b.len();
    let a = DMatrix::from_fn(rows, idx.len(), |r, c| columns[idx[c]][r]);
    let rhs = DVector::from_column_slice(b);
    if idx.len() <= rows {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diag_min = r.diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        if diag_min > 1e-10 * diag_max {
            let qtb = qr.q().transpose() * &rhs;
            if let Some(s) = r.solve_upper_triangular(&qtb) {
                return s.iter().copied().collect();
            }
        }
    }
    let svd = a.svd(true, true);
    match svd.solve(&rhs, 1e-12) {
        Ok(s) => s.iter().copied().collect(),
        Err(_) => vec![0.0; idx.len()],
    }
}

/// Distance-like residual of `p` from the convex hull of `points`
/// (zero when `p` is a convex combination).
pub fn hull_residual(points: &[Vec<f64>], p: &[f64]) -> f64 {
    // (p, 1) in cone{(v_i, 1)}; the weight row is scaled up so the affine
    // constraint dominates the least-squares balance.
    const WEIGHT: f64 = 1e3;
    let columns: Vec<Vec<f64>> = points
        .iter()
        .map(|v| {
            let mut c = v.clone();
            c.push(WEIGHT);
            c
        })
        .collect();
    let mut b = p.to_vec();
    b.push(WEIGHT);
    nnls(&columns, &b).1
}

/// Residual of `p` from the convex cone generated by `generators`.
pub fn cone_residual(generators: &[Vec<f64>], p: &[f64]) -> f64 {
    nnls(generators, p).1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_simple() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (x, r) = nnls(&cols, &[2.0, 3.0]);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12 && r < 1e-12);
        let (x, r) = nnls(&cols, &[-1.0, 3.0]);
        assert!(x[0] == 0.0 && (x[1] - 3.0).abs() < 1e-12 && (r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hull_membership() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(hull_residual(&pts, &[0.2, 0.3]) < 1e-10);
        assert!(hull_residual(&pts, &[0.8, 0.8]) > 1e-3);
        assert!(hull_residual(&pts, &[-0.1, 0.2]) > 1e-3);
    }

    #[test]
    fn cone_membership() {
        let gens = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        assert!(cone_residual(&gens, &[3.0, 3.0]) < 1e-10);
        assert!(cone_residual(&gens, &[1.0, -0.5]) > 1e-3);
    }
}
