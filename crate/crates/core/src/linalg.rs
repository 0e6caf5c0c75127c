//! Dense symmetric solves for the normal equations.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::scalar::{MatMut, MatRef, Real};

const BLOCK: usize = 128;

/// Lower Cholesky factor of a symmetric positive-definite matrix, stored
/// row-major with the strict upper triangle zeroed.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

/// Pivot at which factorization broke down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotPositiveDefinite {
    pub pivot: usize,
}

impl<T: Real> Cholesky<T> {
    /// Factors the row-major `n x n` matrix `a`; only the lower triangle is read.
    pub fn factor(mut a: Vec<T>, n: usize) -> Result<Self, NotPositiveDefinite> {
        assert_eq!(a.len(), n * n, "cholesky: matrix is not n x n");
        let mut panel: Vec<T> = Vec::new();
        let mut kb = 0;
        while kb < n {
            let b = BLOCK.min(n - kb);
            if kb > 0 {
                // a[kb.., kb..kb+b] -= l[kb.., ..kb] * l[kb..kb+b, ..kb]^T
                let rows = n - kb;
                panel.clear();
                panel.reserve(rows * kb);
                for i in kb..n {
                    panel.extend_from_slice(&a[i * n..i * n + kb]);
                }
                let lhs = MatRef::row_major(&panel, rows, kb);
                let rhs = MatRef { data: &panel[..], rows: kb, cols: b, row_stride: 1, col_stride: kb };
                let out = MatMut { data: &mut a[kb * n + kb..], rows, cols: b, row_stride: n, col_stride: 1 };
                T::gemm(-T::one(), lhs, rhs, T::one(), out);
            }
            for j in kb..kb + b {
                let mut d = a[j * n + j];
                for k in kb..j {
                    d -= a[j * n + k] * a[j * n + k];
                }
                if !(d > T::zero()) || !d.is_finite() {
                    return Err(NotPositiveDefinite { pivot: j });
                }
                let ljj = d.sqrt();
                a[j * n + j] = ljj;
                for i in j + 1..n {
                    let mut s = a[i * n + j];
                    for k in kb..j {
                        s -= a[i * n + k] * a[j * n + k];
                    }
                    a[i * n + j] = s / ljj;
                }
            }
            kb += b;
        }
        for i in 0..n {
            for v in &mut a[i * n + i + 1..(i + 1) * n] {
                *v = T::zero();
            }
        }
        Ok(Self { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_data(&self) -> &[T] {
        &self.l
    }

    /// `(max L_ii / min L_ii)^2`, a cheap lower bound on the condition number.
    pub fn condition_estimate(&self) -> f64 {
        let diag = (0..self.n).map(|i| self.l[i * self.n + i].as_f64());
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo).powi(2)
    }

    /// Solves `A X = B` in place for row-major `B` with `r` columns.
    pub fn solve_in_place(&self, b: &mut [T], r: usize) {
        let n = self.n;
        assert_eq!(b.len(), n * r, "cholesky solve: rhs shape");
        let l = &self.l;
        for i in 0..n {
            for c in 0..r {
                let mut s = b[i * r + c];
                for k in 0..i {
                    s -= l[i * n + k] * b[k * r + c];
                }
                b[i * r + c] = s / l[i * n + i];
            }
        }
        for i in (0..n).rev() {
            for c in 0..r {
                b[i * r + c] /= l[i * n + i];
            }
            for k in 0..i {
                let lik = l[i * n + k];
                for c in 0..r {
                    let xi = b[i * r + c];
                    b[k * r + c] -= lik * xi;
                }
            }
        }
    }
}

/// Minimum-norm solution of `A X = B` for symmetric `A` via its
/// eigendecomposition, discarding eigenvalues below `rcond * max|lambda|`.
/// Returns the solution and the retained rank.
pub fn symmetric_pinv_solve<T: Real>(a: &[T], n: usize, b: &[T], r: usize, rcond: f64) -> (Vec<T>, usize) {
    let mat = DMatrix::from_fn(n, n, |i, j| {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        a[i * n + j].as_f64()
    });
    let rhs = DMatrix::from_fn(n, r, |i, c| b[i * r + c].as_f64());
    let eig = SymmetricEigen::new(mat);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rcond * max;
    let mut proj = eig.eigenvectors.transpose() * rhs;
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = if lambda.abs() > cutoff && max > 0.0 {
            rank += 1;
            1.0 / lambda
        } else {
            0.0
        };
        for c in 0..r {
            proj[(k, c)] *= scale;
        }
    }
    let x = eig.eigenvectors * proj;
    let out = (0..n).flat_map(|i| (0..r).map(move |c| (i, c))).map(|(i, c)| T::lit(x[(i, c)])).collect();
    (out, rank)
}
