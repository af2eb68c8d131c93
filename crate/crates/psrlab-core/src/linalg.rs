//! Small dense matrix helpers: numerical rank, SVD pseudoinverse, column
//! space projectors, and the 1->1 operator norm.

use nalgebra::{DMatrix, DVector};

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let svd = m.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Smallest singular value (0 for empty matrices).
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let top = sv.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Moore-Penrose pseudoinverse via SVD with relative cutoff `rel_tol`.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * top;
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            sinv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * sinv * u.transpose()
}

/// Orthogonal projector onto the column space of `m` (symmetric, idempotent).
pub fn col_space_projector(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 || m.ncols() == 0 {
        return DMatrix::zeros(n, n);
    }
    let svd = m.clone().svd(true, false);
    let top = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * top;
    let u = svd.u.as_ref().unwrap();
    let mut proj = DMatrix::zeros(n, n);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let col = u.column(i);
            proj += &col * col.transpose();
        }
    }
    proj
}

/// Operator norm sup_{||x||_1 = 1} ||M x||_1, i.e. the max column 1-norm.
pub fn norm_one_to_one(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// ||a - b||_1 for vectors of equal length.
pub fn l1_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}
