use nalgebra::{DMatrix, DVector};

use crate::error::{config_err, shape_err, Result};
use crate::linalg;
use crate::spectral::{LowRankFactors, SparsePerturbation};

/// Tangent space `{ U A + B V^T }` of the rank manifold at a matrix with
/// column space `U` and row space `V`.
///
/// The two bases may have different widths, which happens for the union
/// of two tangent spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSpace {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

/// Element `U K + J V^T` of a tangent space, stored with `U^T J = 0` so the
/// two terms are orthogonal and `‖X‖_F^2 = ‖K‖_F^2 + ‖J‖_F^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub k: DMatrix<f64>,
    pub j: DMatrix<f64>,
}

impl TangentSpace {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if linalg::orthonormality_defect(&u) > 1e-10 || linalg::orthonormality_defect(&v) > 1e-10 {
            return config_err("tangent space bases must have orthonormal columns");
        }
        Ok(TangentSpace { u, v })
    }

    pub fn from_factors(lr: &LowRankFactors) -> Self {
        TangentSpace { u: lr.u().clone(), v: lr.v().clone() }
    }

    /// Smallest tangent space containing both inputs' tangent spaces: the
    /// spans of the stacked column and row bases.
    pub fn union(a: &LowRankFactors, b: &LowRankFactors) -> Result<Self> {
        if a.shape() != b.shape() {
            return shape_err("tangent space union of differently shaped matrices");
        }
        let u = linalg::column_space(&hstack(a.u(), b.u()), 1e-10);
        let v = linalg::column_space(&hstack(a.v(), b.v()), 1e-10);
        Ok(TangentSpace { u, v })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0 && self.v.ncols() == 0
    }

    /// Length of the coordinate vector of a tangent element.
    pub fn coord_len(&self) -> usize {
        let (d1, d2) = self.shape();
        self.u.ncols() * d2 + d1 * self.v.ncols()
    }

    /// `P_T(X) = U U^T X + X V V^T - U U^T X V V^T`.
    pub fn project_dense(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if (x.nrows(), x.ncols()) != self.shape() {
            return shape_err(format!(
                "matrix is {}x{} but the tangent space lives in {}x{}",
                x.nrows(),
                x.ncols(),
                self.shape().0,
                self.shape().1
            ));
        }
        let utx = self.u.transpose() * x;
        let left = &self.u * &utx;
        let xv = x * &self.v;
        let right = &xv * self.v.transpose();
        let both = &self.u * (&utx * &self.v) * self.v.transpose();
        Ok(left + right - both)
    }

    /// Projection of a sparse matrix in factored form, `O(nnz (r_u + r_v))`.
    pub fn project_sparse(&self, s: &SparsePerturbation) -> Result<TangentVector> {
        if s.shape() != self.shape() {
            return shape_err("sparse matrix shape differs from the tangent space");
        }
        Ok(self.project_cells(s.rows(), s.cols(), s.vals()))
    }

    pub(crate) fn project_cells(&self, rows: &[usize], cols: &[usize], vals: &[f64]) -> TangentVector {
        let (d1, d2) = self.shape();
        let (ru, rv) = (self.u.ncols(), self.v.ncols());
        let u_t = self.u.transpose();
        let v_t = self.v.transpose();
        let mut k = DMatrix::zeros(ru, d2);
        let mut sv_t = DMatrix::zeros(rv, d1);
        for ((&i, &j), &x) in rows.iter().zip(cols).zip(vals) {
            if x == 0.0 {
                continue;
            }
            if ru > 0 {
                k.column_mut(j).axpy(x, &u_t.column(i), 1.0);
            }
            if rv > 0 {
                sv_t.column_mut(i).axpy(x, &v_t.column(j), 1.0);
            }
        }
        let sv = sv_t.transpose();
        let j = if ru > 0 { &sv - &self.u * (&k * &self.v) } else { sv };
        TangentVector { k, j }
    }

    /// Entries of a tangent element at the listed cells.
    pub fn sample(&self, x: &TangentVector, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let u_t = self.u.transpose();
        let j_t = x.j.transpose();
        let v_t = self.v.transpose();
        rows.iter()
            .zip(cols)
            .map(|(&i, &j)| {
                let a = if u_t.nrows() > 0 { u_t.column(i).dot(&x.k.column(j)) } else { 0.0 };
                let b = if v_t.nrows() > 0 { j_t.column(i).dot(&v_t.column(j)) } else { 0.0 };
                a + b
            })
            .collect()
    }

    pub fn to_dense(&self, x: &TangentVector) -> DMatrix<f64> {
        &self.u * &x.k + &x.j * self.v.transpose()
    }

    /// Restores `U^T J = 0` after arbitrary edits to the parts.
    pub fn canonicalize(&self, x: &mut TangentVector) {
        if self.u.ncols() == 0 {
            return;
        }
        let c = self.u.transpose() * &x.j;
        x.j -= &self.u * &c;
        x.k += &c * self.v.transpose();
    }

    /// Orthogonal projection of the coordinates onto `U^T J = 0`. Unlike
    /// [`canonicalize`](Self::canonicalize) this changes the matrix
    /// represented, but it is the map under which the coordinates stay an
    /// isometry.
    pub(crate) fn drop_redundant(&self, x: &mut TangentVector) {
        if self.u.ncols() == 0 {
            return;
        }
        let c = self.u.transpose() * &x.j;
        x.j -= &self.u * &c;
    }

    pub fn to_coords(&self, x: &TangentVector) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.coord_len());
        out.extend_from_slice(x.k.as_slice());
        out.extend_from_slice(x.j.as_slice());
        DVector::from_vec(out)
    }

    pub fn from_coords(&self, c: &DVector<f64>) -> TangentVector {
        let (d1, d2) = self.shape();
        let (ru, rv) = (self.u.ncols(), self.v.ncols());
        let split = ru * d2;
        TangentVector {
            k: DMatrix::from_column_slice(ru, d2, &c.as_slice()[..split]),
            j: DMatrix::from_column_slice(d1, rv, &c.as_slice()[split..]),
        }
    }
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        (self.k.norm_squared() + self.j.norm_squared()).sqrt()
    }
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `P_Omega(x)`: keeps the entries listed in `support`.
pub fn project_support(support: &[usize], x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    for &k in support {
        if k < x.len() {
            out[k] = x[k];
        }
    }
    out
}
