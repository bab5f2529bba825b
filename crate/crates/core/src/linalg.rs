//! Small dense solvers over row-major `Vec` storage.

use crate::Scalar;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factor `a` (n×n, row-major). Returns `None` when a pivot is not
    /// strictly positive, i.e. the matrix is not numerically positive definite.
    pub fn factor(a: &[T], n: usize) -> Option<Self> {
        assert_eq!(a.len(), n * n, "matrix storage does not match dimension");
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > T::zero()) || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` using the stored factor.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_leading(self.n, b)
    }

    /// Solve with the leading `k×k` block of `A`, whose factor is the leading
    /// block of this one.
    pub fn solve_leading(&self, k: usize, b: &[T]) -> Vec<T> {
        assert!(k <= self.n && b.len() == k, "leading block size mismatch");
        let stride = self.n;
        let n = k;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * stride + k] * y[k];
            }
            y[i] = s / self.l[i * stride + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * stride + i] * y[k];
            }
            y[i] = s / self.l[i * stride + i];
        }
        y
    }
}

/// Gaussian elimination with partial pivoting. Returns `None` if a pivot
/// falls below `tol` times the largest absolute entry of `a`.
pub fn lu_solve<T: Scalar>(a: &[T], b: &[T], n: usize, tol: T) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if !(scale > T::zero()) || !scale.is_finite() {
        return None;
    }
    let threshold = tol * scale;
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, T::neg_infinity()), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        if !(pivot_abs > threshold) {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for r in col + 1..n {
            let factor = m[r * n + col] / pivot;
            if factor == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= factor * v;
            }
            let v = x[col];
            x[r] -= factor * v;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= m[i * n + k] * x[k];
        }
        x[i] = s / m[i * n + i];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}
