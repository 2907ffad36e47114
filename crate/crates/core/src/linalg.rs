//! Small dense helpers shared by the geometry, calculus and tracing code.

use nalgebra::{DMatrix, DVector};

/// Determinant by LU factorisation with partial pivoting.
///
/// The sign is tracked through the row swaps; a zero pivot column
/// short-circuits to exactly `0.0`.
pub fn lu_determinant(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "determinant of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return 1.0;
    }
    let mut a = m.clone();
    let mut det = 1.0;
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_abs = a[(k, k)].abs();
        for r in (k + 1)..n {
            let v = a[(r, k)].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs == 0.0 {
            return 0.0;
        }
        if pivot_row != k {
            a.swap_rows(k, pivot_row);
            det = -det;
        }
        let pivot = a[(k, k)];
        det *= pivot;
        for r in (k + 1)..n {
            let factor = a[(r, k)] / pivot;
            if factor != 0.0 {
                for c in (k + 1)..n {
                    a[(r, c)] -= factor * a[(k, c)];
                }
            }
        }
    }
    det
}

/// Maximum absolute row sum.
pub fn infinity_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Matrix whose columns are `p` followed by `vs`.
pub fn column_matrix(p: &DVector<f64>, vs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = p.len();
    let mut m = DMatrix::zeros(n, vs.len() + 1);
    m.set_column(0, p);
    for (j, v) in vs.iter().enumerate() {
        m.set_column(j + 1, v);
    }
    m
}

/// Cofactor vector of an `n x (n+1)` matrix: the unique vector `c` with
/// `det([m; x^T]) = c . x` for every `x`. It spans the null space when
/// `m` has full row rank.
pub fn cofactor_null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let rows = m.nrows();
    let cols = m.ncols();
    assert_eq!(cols, rows + 1, "cofactor null vector needs an n x (n+1) matrix");
    let mut c = DVector::zeros(cols);
    for k in 0..cols {
        let minor = m.clone().remove_column(k);
        // expansion of det([m; x^T]) along the last row
        let sign = if (rows + k) % 2 == 0 { 1.0 } else { -1.0 };
        c[k] = sign * lu_determinant(&minor);
    }
    c
}

pub fn sign_of(x: f64, tol: f64) -> i32 {
    if x.abs() < tol {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_determinant_small_cases() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(lu_determinant(&m), -1.0);
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 1.0, 3.0, 2.0, 1.0, 1.0, 1.0]);
        // 2(3-2) - 0 + 1(1-3) = 0
        assert!(lu_determinant(&m).abs() < 1e-14);
        assert_eq!(lu_determinant(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn cofactor_vector_spans_null_space() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.5, -1.0, 4.0]);
        let c = cofactor_null_vector(&m);
        assert!((&m * &c).norm() < 1e-12);
        let mut full = m.clone().insert_row(2, 0.0);
        full.set_row(2, &c.transpose());
        assert!(lu_determinant(&full) > 0.0);
        assert!((lu_determinant(&full) - c.norm_squared()).abs() < 1e-10);
    }
}
