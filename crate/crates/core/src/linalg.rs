//! Small dense linear algebra used by the KKT machinery.
//!
//! Every system in this crate is at most a handful of rows, so everything is
//! dense and direct.

use nalgebra::{DMatrix, DVector};

/// Singular values of the row stack `a` in ascending order, one per row: when
/// there are more rows than columns the missing values are zeros (the rows
/// cannot be independent).
pub fn singular_values_rows(a: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = a.shape();
    if r == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = if c == 0 {
        Vec::new()
    } else {
        a.clone().svd(false, false).singular_values.iter().copied().collect()
    };
    while s.len() < r {
        s.push(0.0);
    }
    s.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Smallest singular value of a matrix viewed as a stack of rows: `0` when
/// there are more rows than columns, `+inf` for an empty stack.
pub fn sigma_min_rows(a: &DMatrix<f64>) -> f64 {
    singular_values_rows(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Smallest singular value of a square matrix (`+inf` for the empty matrix).
pub fn sigma_min(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return f64::INFINITY;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis (as columns) of the null space of the rows of `a`, an
/// `r x m` matrix. Uses Householder reflections on the transpose, which keeps
/// axis-aligned constraint gradients exact. Falls back to an SVD when the rows
/// are rank deficient at `tol`.
pub fn null_space(a: &DMatrix<f64>, m: usize, tol: f64) -> DMatrix<f64> {
    let r = a.nrows();
    if r == 0 {
        return DMatrix::identity(m, m);
    }
    if r <= m && sigma_min_rows(a) > tol {
        // Householder QR of a^T (m x r): the last m - r columns of Q span the
        // null space.
        let mut q = DMatrix::<f64>::identity(m, m);
        let mut work = a.transpose();
        for j in 0..r {
            let col: Vec<f64> = (j..m).map(|i| work[(i, j)]).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if col[0] >= 0.0 { -norm } else { norm };
            let mut v = col.clone();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|t| t * t).sum();
            if vnorm2 == 0.0 {
                continue;
            }
            // work <- H work
            for c in 0..work.ncols() {
                let dot: f64 = (j..m).map(|i| v[i - j] * work[(i, c)]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in j..m {
                    work[(i, c)] -= f * v[i - j];
                }
            }
            // q <- q H
            for row in 0..m {
                let dot: f64 = (j..m).map(|i| q[(row, i)] * v[i - j]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in j..m {
                    q[(row, i)] -= f * v[i - j];
                }
            }
        }
        return q.columns(r, m - r).into_owned();
    }
    // Rank deficient: square up with zero rows so the SVD returns a full V.
    let rows = r.max(m);
    let mut sq = DMatrix::<f64>::zeros(rows, m);
    sq.view_mut((0, 0), (r, m)).copy_from(a);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Symmetric eigen-decomposition returning (eigenvalues ascending, eigenvectors
/// as matching columns).
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(
        &idx.iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// Determinant via full-pivot LU (1 for the empty matrix).
pub fn det(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().full_piv_lu().determinant()
}

/// Solves `a x = b` with full pivoting; `None` when the factorization is singular.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Some(DMatrix::zeros(0, b.ncols()));
    }
    a.clone().full_piv_lu().solve(b)
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    a.clone().full_piv_lu().solve(b)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, t| acc.max(t.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_min_of_overdetermined_stack_is_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(sigma_min_rows(&a), 0.0);
    }

    #[test]
    fn axis_aligned_null_space_is_exact() {
        let a = DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]);
        let z = null_space(&a, 2, 1e-12);
        assert_eq!(z.ncols(), 1);
        assert_eq!(z[(0, 0)], 0.0);
        assert_eq!(z[(1, 0)].abs(), 1.0);
    }

    #[test]
    fn null_space_of_dependent_rows() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let z = null_space(&a, 2, 1e-10);
        assert_eq!(z.ncols(), 1);
        let r = &a * &z;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn null_space_general_rows_is_orthonormal() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -0.5]);
        let z = null_space(&a, 3, 1e-12);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).norm() < 1e-14);
        let g = z.transpose() * &z;
        assert!((g - DMatrix::identity(2, 2)).norm() < 1e-14);
    }
}
