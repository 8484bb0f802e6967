//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

fn threshold(sv: &DVector<f64>, tol: f64) -> f64 {
    let max = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    tol * max.max(1.0)
}

fn padded(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() >= m.ncols() {
        return m.clone();
    }
    let mut out = DMatrix::zeros(m.ncols(), m.ncols());
    out.rows_mut(0, m.nrows()).copy_from(m);
    out
}

pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let t = threshold(&sv, tol);
    sv.iter().filter(|&&s| s > t).count()
}

/// Orthonormal basis of `{x | m x = 0}` as columns.
pub fn nullspace(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let svd = padded(m).svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let t = threshold(&svd.singular_values, tol);
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= t)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Minimum-norm least-squares solution of `a x = b` and the residual norm `‖a x − b‖`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> (DVector<f64>, f64) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), b.norm());
    }
    if a.nrows() == 0 {
        return (DVector::zeros(a.ncols()), 0.0);
    }
    let svd = a.clone().svd(true, true);
    let t = threshold(&svd.singular_values, tol);
    let x = svd.solve(b, t).expect("U and V were computed");
    let r = (a * &x - b).norm();
    (x, r)
}

/// Solves a square system when it is nonsingular at tolerance `tol`.
pub fn solve_square(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    if a.nrows() != a.ncols() || rank(a, tol) < a.nrows() {
        return None;
    }
    a.clone().lu().solve(b)
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let ncols = blocks.iter().map(|b| b.ncols()).max().unwrap_or(0);
    let nrows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() > 0 {
            out.view_mut((r, 0), (b.nrows(), b.ncols())).copy_from(*b);
        }
        r += b.nrows();
    }
    out
}

pub fn rows_to_matrix(rows: &[DVector<f64>], ncols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

/// Orthogonal projection of `x` onto `{y | a y = 0}`.
pub fn project_to_kernel(a: &DMatrix<f64>, x: &DVector<f64>, tol: f64) -> DVector<f64> {
    if a.nrows() == 0 {
        return x.clone();
    }
    let (c, _) = lstsq(&a.transpose(), x, tol);
    x - a.transpose() * c
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn nullspace_of_wide_matrix() {
        let m = dmatrix![1.0, 1.0, 0.0];
        let n = nullspace(&m, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-12);
    }

    #[test]
    fn nullspace_of_full_rank_square_is_empty() {
        let m = dmatrix![2.0, 1.0; 0.0, 3.0];
        assert_eq!(nullspace(&m, 1e-12).ncols(), 0);
        assert_eq!(rank(&m, 1e-12), 2);
    }

    #[test]
    fn lstsq_reports_inconsistency() {
        let a = dmatrix![1.0; 1.0];
        let (x, r) = lstsq(&a, &dvector![1.0, 3.0], 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projection_lands_in_kernel() {
        let a = dmatrix![1.0, -1.0, 0.0];
        let p = project_to_kernel(&a, &dvector![3.0, 1.0, 5.0], 1e-12);
        assert!((&a * &p).norm() < 1e-12);
        assert!((p[2] - 5.0).abs() < 1e-12);
    }
}
