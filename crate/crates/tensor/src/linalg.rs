//! Dense LU factorization with partial pivoting, used for fixed linear systems.

use crate::error::{Result, TensorError};

#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    // Packed L (unit diagonal, strictly below) and U (on and above the diagonal).
    lu: Vec<f64>,
    // perm[i] is the original row stored at position i.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factor a row-major `n×n` matrix. Pivots smaller than `1e-12` times the
    /// largest entry are reported as singular.
    pub fn factor(matrix: &[f64], n: usize) -> Result<Self> {
        if matrix.len() != n * n {
            return Err(TensorError::dim("lu", format!("expected {} entries, got {}", n * n, matrix.len())));
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut lu = matrix.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let (pivot_row, pivot_abs) =
                (col..n)
                    .map(|r| (r, lu[r * n + col].abs()))
                    .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs <= 1e-12 * scale {
                return Err(TensorError::Numerical(format!("singular system: pivot {pivot_abs:e} in column {col}")));
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for r in col + 1..n {
                let factor = lu[r * n + col] / pivot;
                lu[r * n + col] = factor;
                if factor != 0.0 {
                    for j in col + 1..n {
                        lu[r * n + j] -= factor * lu[col * n + j];
                    }
                }
            }
        }
        Ok(LuFactors { n, lu, perm })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Solve `A X = B` for `B` of shape `n×m` (row-major).
    pub fn solve(&self, rhs: &[f64], m: usize) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n * m];
        for i in 0..n {
            x[i * m..(i + 1) * m].copy_from_slice(&rhs[self.perm[i] * m..(self.perm[i] + 1) * m]);
        }
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[i * n + j];
                if l != 0.0 {
                    for c in 0..m {
                        x[i * m + c] -= l * x[j * m + c];
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.lu[i * n + j];
                if u != 0.0 {
                    for c in 0..m {
                        x[i * m + c] -= u * x[j * m + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..m {
                x[i * m + c] /= d;
            }
        }
        x
    }

    /// Solve `Aᵀ X = B`.
    pub fn solve_transposed(&self, rhs: &[f64], m: usize) -> Vec<f64> {
        let n = self.n;
        let mut w = rhs.to_vec();
        // Uᵀ z = b (lower triangular)
        for i in 0..n {
            for j in 0..i {
                let u = self.lu[j * n + i];
                if u != 0.0 {
                    for c in 0..m {
                        w[i * m + c] -= u * w[j * m + c];
                    }
                }
            }
            let d = self.lu[i * n + i];
            for c in 0..m {
                w[i * m + c] /= d;
            }
        }
        // Lᵀ w = z (unit upper triangular)
        for i in (0..n).rev() {
            for j in i + 1..n {
                let l = self.lu[j * n + i];
                if l != 0.0 {
                    for c in 0..m {
                        w[i * m + c] -= l * w[j * m + c];
                    }
                }
            }
        }
        let mut x = vec![0.0; n * m];
        for i in 0..n {
            x[self.perm[i] * m..(self.perm[i] + 1) * m].copy_from_slice(&w[i * m..(i + 1) * m]);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum()).collect()
    }

    #[test]
    fn solves_permuted_system() {
        let a = [0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = LuFactors::factor(&a, 3).unwrap();
        let b = [3.0, 2.0, 4.0];
        let x = lu.solve(&b, 1);
        let back = matvec(&a, &x, 3);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let at: Vec<f64> = (0..9).map(|k| a[(k % 3) * 3 + k / 3]).collect();
        let y = lu.solve_transposed(&b, 1);
        let back = matvec(&at, &y, 3);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(matches!(LuFactors::factor(&a, 2), Err(TensorError::Numerical(_))));
    }
}
