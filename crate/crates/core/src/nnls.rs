//! Lawson–Hanson active-set solver for `min ‖A x − b‖` subject to `x ≥ 0`.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Column matrix with its Gram matrix, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct Nnls {
    a: DMatrix<f64>,
    gram: DMatrix<f64>,
    scale: f64,
}

impl Nnls {
    pub fn new(a: DMatrix<f64>) -> Self {
        let gram = a.tr_mul(&a);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        Nnls { a, gram, scale }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn solve(&self, b: &DVector<f64>) -> NnlsSolution {
        let n = self.a.ncols();
        let atb = self.a.tr_mul(b);
        let scale = self.scale * b.norm().max(1.0);
        let tol = 1e-12 * scale;
        let max_iter = 3 * n + 10;
        let mut x = DVector::zeros(n);
        let mut passive = vec![false; n];
        // Entries whose admission left the new variable nonpositive; cleared once `x` moves.
        let mut blocked = vec![false; n];
        let mut iterations = 0;

        loop {
            let w = &atb - &self.gram * &x;
            let candidate = (0..n)
                .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
                .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
            let Some(j) = candidate else { break };
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            passive[j] = true;

            let mut first = true;
            loop {
                let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
                let z = self.solve_subset(b, &atb, &idx);
                if first {
                    first = false;
                    let pos = idx.iter().position(|&i| i == j).expect("entered index is passive");
                    if z[pos] <= 0.0 {
                        passive[j] = false;
                        blocked[j] = true;
                        break;
                    }
                }
                if z.iter().all(|&v| v > 0.0) {
                    x.fill(0.0);
                    for (p, &i) in idx.iter().enumerate() {
                        x[i] = z[p];
                    }
                    blocked.fill(false);
                    break;
                }
                let mut alpha = f64::INFINITY;
                for (p, &i) in idx.iter().enumerate() {
                    if z[p] <= 0.0 {
                        let denom = x[i] - z[p];
                        if denom > 0.0 {
                            alpha = alpha.min(x[i] / denom);
                        }
                    }
                }
                if !alpha.is_finite() {
                    alpha = 0.0;
                }
                for (p, &i) in idx.iter().enumerate() {
                    x[i] += alpha * (z[p] - x[i]);
                }
                for &i in &idx {
                    if x[i] <= 1e-15 * scale {
                        x[i] = 0.0;
                        passive[i] = false;
                    }
                }
                blocked.fill(false);
                if !passive.iter().any(|&p| p) {
                    break;
                }
            }
        }
        let x = self.polish(b, x);
        let residual = (b - &self.a * &x).norm();
        NnlsSolution { x, residual, iterations }
    }

    /// Least squares on the columns `idx`, through the Gram block when it is well posed.
    fn solve_subset(&self, b: &DVector<f64>, atb: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        let g = self.gram.select_rows(idx).select_columns(idx);
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| atb[i]));
        if let Some(chol) = g.cholesky() {
            let diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            let diag_max = chol.l_dirty().diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if diag_min > 1e-6 * diag_max {
                return chol.solve(&rhs);
            }
        }
        svd_solve(&self.a, b, idx)
    }

    /// Re-solves on the final support directly from the columns, keeping the better point.
    fn polish(&self, b: &DVector<f64>, x: DVector<f64>) -> DVector<f64> {
        let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
        if idx.is_empty() {
            return x;
        }
        let z = svd_solve(&self.a, b, &idx);
        if z.iter().any(|&v| v <= 0.0) {
            return x;
        }
        let mut y = DVector::zeros(x.len());
        for (p, &i) in idx.iter().enumerate() {
            y[i] = z[p];
        }
        if (b - &self.a * &y).norm() < (b - &self.a * &x).norm() {
            y
        } else {
            x
        }
    }
}

/// Lawson–Hanson solve for a single right-hand side.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    Nnls::new(a.clone()).solve(b)
}

fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(idx);
    let svd = sub.svd(true, true);
    svd.solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(idx.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 3.0, 5.0]);
        let s = nnls(&a, &b);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 3.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn clamps_negative_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let s = nnls(&a, &b);
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
        assert!((s.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uses_opposite_pair_for_signed_targets() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-0.5, 1.5]);
        let s = nnls(&a, &b);
        assert!(s.residual < 1e-12);
        assert!(s.x.iter().all(|&v| v >= 0.0));
    }
}
