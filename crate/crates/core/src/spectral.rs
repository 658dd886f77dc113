//! Low-rank factor storage, the spectral proximal operator, and the
//! truncated SVD of a factored low-rank matrix plus a sparse perturbation.
//!
//! [`lrssvd`] never forms the dense `d1 x d2` matrix. Each product with the
//! implicit operator `U diag(S) V^T + Y` costs `O((d1 + d2) r k + nnz(Y) k)`
//! for a block of `k` vectors, and a sweep of block power iteration adds
//! two thin QR factorizations and one `k x k` SVD.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::linalg::{self, SortedSvd};
use crate::regularizers::RegularizerSpec;

const ORTHO_TOL: f64 = 1e-10;

/// Truncated SVD triple `U diag(S) V^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl LowRankFactors {
    /// Validates column orthonormality and sorted nonnegative values.
    pub fn new(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = s.len();
        if u.ncols() != r || v.ncols() != r {
            return shape_err(format!(
                "factor ranks disagree: U has {} columns, S has {r} values, V has {} columns",
                u.ncols(),
                v.ncols()
            ));
        }
        if s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return config_err("singular values must be finite and nonnegative");
        }
        if s.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return config_err("singular values must be sorted nonincreasing");
        }
        if linalg::orthonormality_defect(&u) > ORTHO_TOL || linalg::orthonormality_defect(&v) > ORTHO_TOL {
            return config_err("factor columns are not orthonormal");
        }
        Ok(LowRankFactors { u, s, v })
    }

    pub(crate) fn from_parts_unchecked(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> Self {
        debug_assert_eq!(u.ncols(), s.len());
        debug_assert_eq!(v.ncols(), s.len());
        LowRankFactors { u, s, v }
    }

    /// The rank-zero matrix of the given shape.
    pub fn zeros(d1: usize, d2: usize) -> Self {
        LowRankFactors { u: DMatrix::zeros(d1, 0), s: DVector::zeros(0), v: DMatrix::zeros(d2, 0) }
    }

    /// Best rank-`max_rank` approximation of a dense matrix, dropping exact
    /// zero singular values.
    pub fn from_dense(m: &DMatrix<f64>, max_rank: usize) -> Self {
        let svd = SortedSvd::new(m);
        let keep = svd.values.iter().take(max_rank).take_while(|&&x| x > 0.0).count();
        LowRankFactors {
            u: svd.u.columns(0, keep).into_owned(),
            s: svd.values.rows(0, keep).into_owned(),
            v: svd.v.columns(0, keep).into_owned(),
        }
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        (self.u, self.s, self.v)
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.v.nrows())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.s.norm()
    }

    /// `U diag(S)`.
    pub fn scaled_u(&self) -> DMatrix<f64> {
        linalg::scale_columns(&self.u, &self.s)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.scaled_u() * self.v.transpose()
    }

    /// Single entry in `O(r)`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank()).map(|t| self.u[(i, t)] * self.s[t] * self.v[(j, t)]).sum()
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        LowRankFactors {
            u: self.u.columns(0, k).into_owned(),
            s: self.s.rows(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
        }
    }

    /// Keeps the triplets at the given column indices, in order.
    pub(crate) fn select(&self, idx: &[usize]) -> Self {
        LowRankFactors {
            u: self.u.select_columns(idx),
            s: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.s[i])),
            v: self.v.select_columns(idx),
        }
    }
}

/// `‖A - B‖_F` for two factored matrices without cancellation in the
/// squared norms: `A - B = [U_a S_a, -U_b S_b] [V_a, V_b]^T`, and a QR of
/// the right block reduces the norm to a `d1 x (r_a + r_b)` product.
pub fn difference_norm(a: &LowRankFactors, b: &LowRankFactors) -> f64 {
    let (ra, rb) = (a.rank(), b.rank());
    if ra == 0 || rb == 0 {
        return if ra == 0 { b.frobenius_norm() } else { a.frobenius_norm() };
    }
    let d1 = a.u.nrows();
    let mut left = DMatrix::zeros(d1, ra + rb);
    left.columns_mut(0, ra).copy_from(&a.scaled_u());
    left.columns_mut(ra, rb).copy_from(&(-b.scaled_u()));
    let mut right = DMatrix::zeros(a.v.nrows(), ra + rb);
    right.columns_mut(0, ra).copy_from(&a.v);
    right.columns_mut(ra, rb).copy_from(&b.v);
    if right.nrows() < right.ncols() {
        return (left * right.transpose()).norm();
    }
    let r = right.qr().r();
    (left * r.transpose()).norm()
}

/// Sparse matrix in coordinate form without duplicate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePerturbation {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    shape: (usize, usize),
}

impl SparsePerturbation {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>, shape: (usize, usize)) -> Result<Self> {
        if rows.len() != cols.len() || rows.len() != vals.len() {
            return shape_err(format!(
                "coordinate lists differ in length: {} rows, {} cols, {} values",
                rows.len(),
                cols.len(),
                vals.len()
            ));
        }
        check_cells(&rows, &cols, shape)?;
        Ok(SparsePerturbation { rows, cols, vals, shape })
    }

    pub(crate) fn from_parts_unchecked(
        rows: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
        shape: (usize, usize),
    ) -> Self {
        SparsePerturbation { rows, cols, vals, shape }
    }

    pub fn empty(shape: (usize, usize)) -> Self {
        SparsePerturbation { rows: vec![], cols: vec![], vals: vec![], shape }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows.iter().zip(&self.cols).zip(&self.vals).map(|((&i, &j), &v)| (i, j, v))
    }

    /// Drops explicit zeros.
    pub fn pruned(&self) -> Self {
        let mut out = SparsePerturbation::empty(self.shape);
        for (i, j, v) in self.iter().filter(|t| t.2 != 0.0) {
            out.rows.push(i);
            out.cols.push(j);
            out.vals.push(v);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.shape.0, self.shape.1);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    /// `Y X` for a dense block `X` with `d2` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.shape.0, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            let mut oc = out.column_mut(c);
            for (i, j, v) in self.iter() {
                oc[i] += v * xc[j];
            }
        }
        out
    }

    /// `Y^T X` for a dense block `X` with `d1` rows.
    pub fn tr_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.shape.1, x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            let mut oc = out.column_mut(c);
            for (i, j, v) in self.iter() {
                oc[j] += v * xc[i];
            }
        }
        out
    }
}

/// Checks that cell coordinates are in range and pairwise distinct.
pub(crate) fn check_cells(rows: &[usize], cols: &[usize], shape: (usize, usize)) -> Result<()> {
    if let Some(k) = rows.iter().zip(cols).position(|(&i, &j)| i >= shape.0 || j >= shape.1) {
        return shape_err(format!(
            "entry {k} at ({}, {}) is outside a {}x{} matrix",
            rows[k], cols[k], shape.0, shape.1
        ));
    }
    let mut keys: Vec<usize> = rows.iter().zip(cols).map(|(&i, &j)| i * shape.1 + j).collect();
    keys.sort_unstable();
    if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
        return config_err(format!("duplicate entry at ({}, {})", w[0] / shape.1, w[0] % shape.1));
    }
    Ok(())
}

/// The implicit matrix `U diag(S) V^T + Y`.
struct LowRankPlusSparse<'a> {
    scaled_u: DMatrix<f64>,
    lr: &'a LowRankFactors,
    y: &'a SparsePerturbation,
}

impl<'a> LowRankPlusSparse<'a> {
    fn new(lr: &'a LowRankFactors, y: &'a SparsePerturbation) -> Self {
        LowRankPlusSparse { scaled_u: lr.scaled_u(), lr, y }
    }

    fn mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.y.mul_dense(x);
        if self.lr.rank() > 0 {
            out += &self.scaled_u * (self.lr.v.transpose() * x);
        }
        out
    }

    fn tr_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.y.tr_mul_dense(x);
        if self.lr.rank() > 0 {
            out += &self.lr.v * (self.scaled_u.transpose() * x);
        }
        out
    }
}

/// Tunables of [`lrssvd`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrssvdOptions {
    /// Number of singular triplets returned (the rank cap `r0`).
    pub rank: usize,
    /// Extra block columns carried through the iteration.
    pub oversample: usize,
    /// Sweeps always performed before the residual test.
    pub min_sweeps: usize,
    pub max_sweeps: usize,
    /// Relative residual target `‖A V - U diag(S)‖_F / ‖S‖`.
    pub tol: f64,
    /// Triplets with singular value below this floor are excluded from the
    /// residual test, since a downstream prox discards them anyway.
    pub floor: Option<f64>,
    /// Seed for the random columns that pad a warm start.
    pub seed: u64,
}

impl Default for LrssvdOptions {
    fn default() -> Self {
        LrssvdOptions { rank: 10, oversample: 5, min_sweeps: 3, max_sweeps: 500, tol: 1e-10, floor: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LrssvdOutput {
    pub factors: LowRankFactors,
    pub converged: bool,
    pub sweeps: usize,
    pub residual: f64,
}

/// Top-`rank` singular triplets of `lr + y` by block power iteration,
/// warm-started from the right singular vectors of `lr`.
///
/// The Ritz step after each sweep takes the QR factors of both sides and
/// diagonalizes the small core: with `Q_U = qr(A V)` and `A^T Q_U = Q_V R`,
/// the SVD `R^T = P S M^T` gives `U = Q_U P`, `V = Q_V M`.
pub fn lrssvd(lr: &LowRankFactors, y: &SparsePerturbation, opts: &LrssvdOptions) -> Result<LrssvdOutput> {
    let (d1, d2) = lr.shape();
    if y.shape() != (d1, d2) {
        return shape_err(format!(
            "low-rank part is {d1}x{d2} but the sparse part is {}x{}",
            y.shape().0,
            y.shape().1
        ));
    }
    if opts.rank == 0 {
        return config_err("lrssvd rank cap must be at least 1");
    }
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 {
        return config_err("lrssvd needs a positive tolerance and at least one sweep");
    }
    let dmin = d1.min(d2);
    let rank = opts.rank.min(dmin);
    let block = (rank + opts.oversample).min(dmin);
    let op = LowRankPlusSparse::new(lr, y);

    let mut start = DMatrix::zeros(d2, block);
    let warm = lr.rank().min(block);
    start.columns_mut(0, warm).copy_from(&lr.v.columns(0, warm));
    if warm < block {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        start.columns_mut(warm, block - warm).copy_from(&linalg::gaussian_matrix(d2, block - warm, &mut rng));
    }
    let mut v_blk = linalg::orthonormalize(&start);
    let mut av = op.mul(&v_blk);

    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let q_u = linalg::orthonormalize(&av);
        let z = op.tr_mul(&q_u);
        let (q_v, r) = {
            let qr = z.qr();
            (qr.q(), qr.r())
        };
        let core = SortedSvd::new(&r.transpose());
        let u_k = &q_u * &core.u;
        v_blk = &q_v * &core.v;
        let s_k = core.values;
        av = op.mul(&v_blk);

        let tracked = match opts.floor {
            Some(f) => s_k.iter().take(rank).take_while(|&&x| x >= f).count(),
            None => rank,
        };
        let residual = if tracked == 0 {
            0.0
        } else {
            let mut num = 0.0;
            for c in 0..tracked {
                num += (av.column(c) - u_k.column(c) * s_k[c]).norm_squared();
            }
            let den = s_k.rows(0, tracked).norm();
            if den > 0.0 {
                num.sqrt() / den
            } else {
                num.sqrt()
            }
        };
        let converged = sweeps >= opts.min_sweeps && residual <= opts.tol;
        if converged || sweeps >= opts.max_sweeps {
            let mut u = u_k.columns(0, rank).into_owned();
            let mut v = v_blk.columns(0, rank).into_owned();
            linalg::fix_signs(&mut u, &mut v);
            let s = s_k.rows(0, rank).into_owned();
            return Ok(LrssvdOutput {
                factors: LowRankFactors::from_parts_unchecked(u, s, v),
                converged,
                sweeps,
                residual,
            });
        }
    }
}

/// Proximal operator of the spectral penalty `sum_i phi(sigma_i(X))`:
/// singular vectors are kept, each singular value goes through the scalar
/// prox, and triplets mapped to zero are dropped.
pub fn spectral_prox(lr: &LowRankFactors, spec: &RegularizerSpec, step: f64) -> Result<LowRankFactors> {
    spec.check_step(step)?;
    let count = lazy_rank_truncation(lr.s.iter().copied(), spec.threshold(step));
    let keep: Vec<usize> = (0..count).filter(|&i| lr.s[i] > spec.threshold(step)).collect();
    let mut out = lr.select(&keep);
    for x in out.s.iter_mut() {
        *x = spec.prox_unchecked(*x, step);
    }
    Ok(out)
}

/// Number of leading values at or above `threshold`, reading a
/// nonincreasing stream only as far as the first value below it.
pub fn lazy_rank_truncation(values: impl IntoIterator<Item = f64>, threshold: f64) -> usize {
    values.into_iter().take_while(|&v| v >= threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::Family;

    fn random_factors(d1: usize, d2: usize, s: &[f64], seed: u64) -> LowRankFactors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = linalg::orthonormalize(&linalg::gaussian_matrix(d1, s.len(), &mut rng));
        let v = linalg::orthonormalize(&linalg::gaussian_matrix(d2, s.len(), &mut rng));
        LowRankFactors::new(u, DVector::from_row_slice(s), v).unwrap()
    }

    #[test]
    fn factor_validation() {
        let lr = random_factors(6, 5, &[3.0, 1.0], 1);
        let (u, s, v) = lr.clone().into_parts();
        assert!(LowRankFactors::new(u.clone(), DVector::from_vec(vec![1.0, 3.0]), v.clone()).is_err());
        assert!(LowRankFactors::new(u.clone() * 2.0, s.clone(), v.clone()).is_err());
        assert!(LowRankFactors::new(u.clone(), DVector::from_vec(vec![1.0]), v.clone()).is_err());
        assert!(LowRankFactors::new(u, s, v).is_ok());
    }

    #[test]
    fn entry_matches_dense() {
        let lr = random_factors(6, 5, &[3.0, 1.0], 2);
        let dense = lr.to_dense();
        for i in 0..6 {
            for j in 0..5 {
                assert!((lr.entry(i, j) - dense[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn difference_norm_matches_dense() {
        let a = random_factors(9, 7, &[4.0, 2.0, 1.0], 3);
        let b = random_factors(9, 7, &[3.0, 0.5], 4);
        let dense = (a.to_dense() - b.to_dense()).norm();
        assert!((difference_norm(&a, &b) - dense).abs() < 1e-12);
        assert!(difference_norm(&a, &a) < 1e-13);
        let z = LowRankFactors::zeros(9, 7);
        assert!((difference_norm(&a, &z) - a.frobenius_norm()).abs() < 1e-12);
        // tiny differences stay resolvable
        let (u, mut s, v) = a.clone().into_parts();
        s[0] += 1e-11;
        let c = LowRankFactors::new(u, s, v).unwrap();
        assert!((difference_norm(&a, &c) - 1e-11).abs() < 1e-14);
    }

    #[test]
    fn sparse_validation_and_products() {
        assert!(SparsePerturbation::new(vec![0, 0], vec![1, 1], vec![1.0, 2.0], (2, 2)).is_err());
        assert!(SparsePerturbation::new(vec![2], vec![0], vec![1.0], (2, 2)).is_err());
        assert!(SparsePerturbation::new(vec![0], vec![0, 1], vec![1.0], (2, 2)).is_err());
        let y = SparsePerturbation::new(vec![0, 1, 2], vec![1, 0, 1], vec![1.0, -2.0, 0.5], (3, 2)).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(y.mul_dense(&x), y.to_dense() * &x);
        let z = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 2.0]);
        assert_eq!(y.tr_mul_dense(&z), y.to_dense().transpose() * &z);
    }

    #[test]
    fn lrssvd_identity_case() {
        let lr = random_factors(30, 20, &[5.0, 3.0, 2.0], 7);
        let y = SparsePerturbation::empty((30, 20));
        let opts = LrssvdOptions { rank: 3, ..Default::default() };
        let out = lrssvd(&lr, &y, &opts).unwrap();
        assert!(out.converged);
        for i in 0..3 {
            assert!((out.factors.s()[i] - lr.s()[i]).abs() < 1e-12 * lr.s()[i]);
            let dot = out.factors.u().column(i).dot(&lr.u().column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-10);
        }
        assert!(difference_norm(&out.factors, &lr) < 1e-10);
    }

    #[test]
    fn lrssvd_rejects_bad_input() {
        let lr = random_factors(5, 4, &[1.0], 1);
        let y = SparsePerturbation::empty((4, 4));
        assert!(lrssvd(&lr, &y, &LrssvdOptions::default()).is_err());
        let y = SparsePerturbation::empty((5, 4));
        assert!(lrssvd(&lr, &y, &LrssvdOptions { rank: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn lrssvd_reports_nonconvergence() {
        let lr = LowRankFactors::zeros(40, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dense = linalg::gaussian_matrix(40, 30, &mut rng);
        let (mut rows, mut cols, mut vals) = (vec![], vec![], vec![]);
        for i in 0..40 {
            for j in 0..30 {
                rows.push(i);
                cols.push(j);
                vals.push(dense[(i, j)]);
            }
        }
        let y = SparsePerturbation::new(rows, cols, vals, (40, 30)).unwrap();
        let opts = LrssvdOptions { rank: 10, oversample: 0, min_sweeps: 1, max_sweeps: 2, ..Default::default() };
        let out = lrssvd(&lr, &y, &opts).unwrap();
        assert!(!out.converged);
        assert_eq!(out.sweeps, 2);
        assert_eq!(out.factors.rank(), 10);
    }

    #[test]
    fn spectral_prox_examples() {
        let lr = random_factors(6, 5, &[3.0, 1.0, 0.2], 9);
        let l1 = RegularizerSpec::l1(1.0).unwrap();
        let out = spectral_prox(&lr, &l1, 0.5).unwrap();
        assert_eq!(out.rank(), 2);
        assert_eq!(out.s().as_slice(), &[2.5, 0.5]);
        assert_eq!(out.u(), &lr.u().columns(0, 2).into_owned());

        let mcp = RegularizerSpec::new(Family::Mcp, 0.1, 1.0).unwrap();
        let same = spectral_prox(&lr, &mcp, 0.05).unwrap();
        assert_eq!(same, lr);

        let mcp = RegularizerSpec::mcp(1.0, 1.0).unwrap();
        assert!(spectral_prox(&lr, &mcp, 1.0).is_err());
    }

    #[test]
    fn lazy_truncation_examples() {
        assert_eq!(lazy_rank_truncation([5.0, 3.0, 0.1], 0.5), 2);
        assert_eq!(lazy_rank_truncation([0.3, 0.2], 0.5), 0);
        assert_eq!(lazy_rank_truncation(std::iter::empty(), 0.5), 0);
        // stops at the first value below the threshold
        let mut seen = 0;
        let count = lazy_rank_truncation(
            [4.0, 2.0, 0.1, 9.0].into_iter().inspect(|_| seen += 1),
            1.0,
        );
        assert_eq!(count, 2);
        assert_eq!(seen, 3);
    }
}
