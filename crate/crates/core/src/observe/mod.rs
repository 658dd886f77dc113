//! Observation models, projections and the sampling diagnostics.
//!
//! The low-rank part is always observed through entry sampling at the
//! cells `(i_k, j_k)`; the kind selects the sparse-part operator:
//!
//! * [`ObservationKind::EntrySampling`]: no sparse part (matrix completion).
//! * [`ObservationKind::Identity`]: `A_s = I_n`, one sparse entry per
//!   observation (robust PCA).
//! * [`ObservationKind::GenericDense`]: a dense `n x d_s` matrix.

mod diagnostics;
pub mod io;
mod tangent;

pub use diagnostics::{
    alpha_sparsity, alpha_sparsity_cells, diagnose, estimate_rip, estimate_rop, incoherence, incoherence_of,
    projection_product_norm, sparse_rip, DiagnosticsReport, PowerOptions, RopEstimate, SamplingPattern,
};
pub use tangent::{project_support, TangentSpace, TangentVector};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::spectral::{check_cells, LowRankFactors, SparsePerturbation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    EntrySampling,
    Identity,
    GenericDense,
}

impl std::str::FromStr for ObservationKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entry_sampling" | "completion" => Ok(ObservationKind::EntrySampling),
            "identity" | "rpca" => Ok(ObservationKind::Identity),
            "generic_dense" | "general" => Ok(ObservationKind::GenericDense),
            other => crate::error::config_err(format!("unknown observation kind `{other}`")),
        }
    }
}

/// Operator applied to the sparse vector.
#[derive(Clone, Debug, PartialEq)]
pub enum SparseModel {
    None,
    Identity,
    /// `n x d_s` measurement matrix.
    Dense(DMatrix<f64>),
}

/// Either representation of the low-rank argument.
#[derive(Clone, Copy, Debug)]
pub enum MatrixRef<'a> {
    Factors(&'a LowRankFactors),
    Dense(&'a DMatrix<f64>),
}

impl<'a> From<&'a LowRankFactors> for MatrixRef<'a> {
    fn from(lr: &'a LowRankFactors) -> Self {
        MatrixRef::Factors(lr)
    }
}

impl<'a> From<&'a DMatrix<f64>> for MatrixRef<'a> {
    fn from(m: &'a DMatrix<f64>) -> Self {
        MatrixRef::Dense(m)
    }
}

impl MatrixRef<'_> {
    fn shape(&self) -> (usize, usize) {
        match self {
            MatrixRef::Factors(lr) => lr.shape(),
            MatrixRef::Dense(m) => (m.nrows(), m.ncols()),
        }
    }
}

/// Measurements `b = A_L(L) + A_s s (+ noise)` with their operators.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    shape: (usize, usize),
    rows: Vec<usize>,
    cols: Vec<usize>,
    b: DVector<f64>,
    sparse: SparseModel,
}

impl ObservationSet {
    pub fn new(
        shape: (usize, usize),
        rows: Vec<usize>,
        cols: Vec<usize>,
        b: DVector<f64>,
        sparse: SparseModel,
    ) -> Result<Self> {
        if rows.len() != cols.len() || rows.len() != b.len() {
            return shape_err(format!(
                "observation lists differ in length: {} rows, {} cols, {} values",
                rows.len(),
                cols.len(),
                b.len()
            ));
        }
        check_cells(&rows, &cols, shape)?;
        if let SparseModel::Dense(a) = &sparse {
            if a.nrows() != rows.len() {
                return shape_err(format!("A_s has {} rows but there are {} observations", a.nrows(), rows.len()));
            }
        }
        Ok(ObservationSet { shape, rows, cols, b, sparse })
    }

    pub fn completion(shape: (usize, usize), rows: Vec<usize>, cols: Vec<usize>, b: DVector<f64>) -> Result<Self> {
        Self::new(shape, rows, cols, b, SparseModel::None)
    }

    pub fn rpca(shape: (usize, usize), rows: Vec<usize>, cols: Vec<usize>, b: DVector<f64>) -> Result<Self> {
        Self::new(shape, rows, cols, b, SparseModel::Identity)
    }

    pub fn general(
        shape: (usize, usize),
        rows: Vec<usize>,
        cols: Vec<usize>,
        b: DVector<f64>,
        a_s: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(shape, rows, cols, b, SparseModel::Dense(a_s))
    }

    /// Builds from `(i, j, value)` triplets; `GenericDense` needs a matrix
    /// and is rejected here.
    pub fn from_triplets(shape: (usize, usize), triplets: &[(usize, usize, f64)], kind: ObservationKind) -> Result<Self> {
        let rows = triplets.iter().map(|t| t.0).collect();
        let cols = triplets.iter().map(|t| t.1).collect();
        let b = DVector::from_iterator(triplets.len(), triplets.iter().map(|t| t.2));
        let sparse = match kind {
            ObservationKind::EntrySampling => SparseModel::None,
            ObservationKind::Identity => SparseModel::Identity,
            ObservationKind::GenericDense => {
                return crate::error::config_err("generic_dense observations need an explicit A_s matrix")
            }
        };
        Self::new(shape, rows, cols, b, sparse)
    }

    pub fn kind(&self) -> ObservationKind {
        match self.sparse {
            SparseModel::None => ObservationKind::EntrySampling,
            SparseModel::Identity => ObservationKind::Identity,
            SparseModel::Dense(_) => ObservationKind::GenericDense,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    /// Number of measurements.
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Dimension of the sparse vector.
    pub fn d_s(&self) -> usize {
        match &self.sparse {
            SparseModel::None => 0,
            SparseModel::Identity => self.n(),
            SparseModel::Dense(a) => a.ncols(),
        }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn sparse_model(&self) -> &SparseModel {
        &self.sparse
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.rows.iter().zip(&self.cols).zip(self.b.iter()).map(|((&i, &j), &v)| (i, j, v)).collect()
    }

    /// Same operators with a different measurement vector.
    pub fn with_b(&self, b: DVector<f64>) -> Result<Self> {
        if b.len() != self.n() {
            return shape_err(format!("expected {} measurements, got {}", self.n(), b.len()));
        }
        Ok(ObservationSet { b, ..self.clone() })
    }

    /// True when every cell of the grid is observed.
    pub fn is_full_grid(&self) -> bool {
        self.n() == self.shape.0 * self.shape.1
    }

    /// `A_L(L)`: the sampled entries, `O(n r)` for factors.
    pub fn sample(&self, l: MatrixRef<'_>) -> Result<DVector<f64>> {
        if l.shape() != self.shape {
            return shape_err(format!(
                "matrix is {}x{} but observations are {}x{}",
                l.shape().0,
                l.shape().1,
                self.shape.0,
                self.shape.1
            ));
        }
        Ok(match l {
            MatrixRef::Dense(m) => {
                DVector::from_iterator(self.n(), self.rows.iter().zip(&self.cols).map(|(&i, &j)| m[(i, j)]))
            }
            MatrixRef::Factors(lr) => sample_factors(lr, &self.rows, &self.cols),
        })
    }

    /// `A_s s`.
    pub fn apply_sparse(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.d_s() {
            return shape_err(format!("sparse vector has length {}, expected {}", s.len(), self.d_s()));
        }
        Ok(match &self.sparse {
            SparseModel::None => DVector::zeros(self.n()),
            SparseModel::Identity => s.clone(),
            SparseModel::Dense(a) => a * s,
        })
    }

    /// `A_L(L) + A_s s`.
    pub fn apply<'a>(&self, l: impl Into<MatrixRef<'a>>, s: &DVector<f64>) -> Result<DVector<f64>> {
        let mut out = self.sample(l.into())?;
        if self.d_s() > 0 {
            out += self.apply_sparse(s)?;
        } else if !s.is_empty() {
            return shape_err(format!("no sparse part, but a vector of length {} was given", s.len()));
        }
        Ok(out)
    }

    /// `A_L(L) + A_s s - b`.
    pub fn residual<'a>(&self, l: impl Into<MatrixRef<'a>>, s: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.apply(l, s)? - &self.b)
    }

    /// `A_L^*(y)`: scatters a measurement-space vector into a sparse matrix.
    pub fn adjoint_l(&self, y: &DVector<f64>) -> Result<SparsePerturbation> {
        if y.len() != self.n() {
            return shape_err(format!("expected {} values, got {}", self.n(), y.len()));
        }
        Ok(SparsePerturbation::from_parts_unchecked(
            self.rows.clone(),
            self.cols.clone(),
            y.as_slice().to_vec(),
            self.shape,
        ))
    }

    /// `A_s^T y`.
    pub fn adjoint_s(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n() {
            return shape_err(format!("expected {} values, got {}", self.n(), y.len()));
        }
        Ok(match &self.sparse {
            SparseModel::None => DVector::zeros(0),
            SparseModel::Identity => y.clone(),
            SparseModel::Dense(a) => a.tr_mul(y),
        })
    }

    /// Both adjoints at once.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<(SparsePerturbation, DVector<f64>)> {
        Ok((self.adjoint_l(y)?, self.adjoint_s(y)?))
    }

    /// The sampling pattern with unit weights.
    pub fn pattern(&self) -> SamplingPattern {
        SamplingPattern::from_observations(self)
    }
}

/// Entries `(U diag(S) V^T)_{i_k j_k}` for every listed cell.
pub(crate) fn sample_factors(lr: &LowRankFactors, rows: &[usize], cols: &[usize]) -> DVector<f64> {
    let r = lr.rank();
    if r == 0 {
        return DVector::zeros(rows.len());
    }
    // transposed copies make each row a contiguous column
    let us_t = lr.scaled_u().transpose();
    let v_t = lr.v().transpose();
    let mut out = vec![0.0; rows.len()];
    let body = |(k, o): (usize, &mut f64)| {
        *o = us_t.column(rows[k]).dot(&v_t.column(cols[k]));
    };
    if rows.len() > 1 << 14 {
        out.par_iter_mut().enumerate().for_each(body);
    } else {
        out.iter_mut().enumerate().for_each(body);
    }
    DVector::from_vec(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_rpca() -> ObservationSet {
        let rows = vec![0, 1, 2, 2];
        let cols = vec![0, 1, 0, 2];
        ObservationSet::rpca((3, 3), rows, cols, DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap()
    }

    #[test]
    fn rejects_bad_sets() {
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(ObservationSet::completion((2, 2), vec![0, 0], vec![1, 1], b.clone()).is_err());
        assert!(ObservationSet::completion((2, 2), vec![0, 2], vec![1, 1], b.clone()).is_err());
        assert!(ObservationSet::completion((2, 2), vec![0], vec![1], b.clone()).is_err());
        assert!(ObservationSet::general((2, 2), vec![0, 1], vec![0, 0], b, DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn zero_inputs_give_zero() {
        let obs = small_rpca();
        let lr = LowRankFactors::zeros(3, 3);
        assert_eq!(obs.apply(&lr, &DVector::zeros(4)).unwrap(), DVector::zeros(4));
        assert_eq!(obs.d_s(), obs.n());
        assert!(obs.apply(&lr, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn rank_one_entry() {
        let u = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let lr = LowRankFactors::new(u, DVector::from_vec(vec![2.5]), v).unwrap();
        let obs = ObservationSet::completion((3, 3), vec![0, 1], vec![0, 2], DVector::zeros(2)).unwrap();
        let out = obs.apply(&lr, &DVector::zeros(0)).unwrap();
        assert_eq!(out[0], 0.6 * 2.5 * 1.0);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn identity_adjoint_and_scatter() {
        let obs = small_rpca();
        let y = DVector::from_vec(vec![0.5, -1.0, 2.0, 3.0]);
        assert_eq!(obs.adjoint_s(&y).unwrap(), y);
        let mut unit = DVector::zeros(4);
        unit[3] = 1.0;
        let scattered = obs.adjoint_l(&unit).unwrap().to_dense();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(2, 2)] = 1.0;
        assert_eq!(scattered, expected);
    }

    #[test]
    fn factor_and_dense_sampling_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dense = linalg::gaussian_matrix(5, 4, &mut rng);
        let lr = LowRankFactors::from_dense(&dense, 4);
        let obs = ObservationSet::completion((5, 4), vec![0, 4, 2], vec![3, 0, 1], DVector::zeros(3)).unwrap();
        let a = obs.sample(MatrixRef::Factors(&lr)).unwrap();
        let b = obs.sample(MatrixRef::Dense(&dense)).unwrap();
        assert!((a - b).norm() < 1e-13);
    }
}
