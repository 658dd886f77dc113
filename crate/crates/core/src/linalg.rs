//! Small dense helpers shared by the spectral and diagnostic code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin orthonormal basis of the column space via Householder QR.
///
/// The returned matrix always has `min(rows, cols)` orthonormal columns,
/// even when the input is rank deficient.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    m.clone().qr().q()
}

/// Orthonormal basis of the column space, dropping directions whose
/// singular value is below `rel_tol` times the largest one.
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = SortedSvd::new(m);
    let top = svd.values.get(0).copied().unwrap_or(0.0);
    let keep = svd.values.iter().take_while(|&&s| top > 0.0 && s > rel_tol * top).count();
    svd.u.columns(0, keep).into_owned()
}

/// Thin SVD with singular values sorted in nonincreasing order and the
/// sign convention applied.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let k = m.nrows().min(m.ncols());
        if k == 0 {
            return SortedSvd {
                u: DMatrix::zeros(m.nrows(), 0),
                values: DVector::zeros(0),
                v: DMatrix::zeros(m.ncols(), 0),
            };
        }
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("left singular vectors requested");
        let v = svd.v_t.expect("right singular vectors requested").transpose();
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let mut out = SortedSvd {
            u: u.select_columns(&order),
            values: DVector::from_iterator(k, order.iter().map(|&i| s[i].max(0.0))),
            v: v.select_columns(&order),
        };
        fix_signs(&mut out.u, &mut out.v);
        out
    }
}

/// Flips singular vector pairs so the first nonzero entry of each left
/// vector is nonnegative.
pub fn fix_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for c in 0..u.ncols() {
        let first = u.column(c).iter().copied().find(|x| x.abs() > 1e-12);
        if matches!(first, Some(x) if x < 0.0) {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `m * diag(d)` without forming the diagonal matrix.
pub fn scale_columns(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (c, &dc) in d.iter().enumerate() {
        out.column_mut(c).scale_mut(dc);
    }
    out
}

/// `‖Q^T Q - I‖_F`, the deviation from orthonormal columns.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    (g - DMatrix::identity(q.ncols(), q.ncols())).norm()
}

/// Spectral norm of a small dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SortedSvd::new(m).values.get(0).copied().unwrap_or(0.0)
}
