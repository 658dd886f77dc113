use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tangent::TangentSpace;
use super::{ObservationSet, SparseModel};
use crate::error::{shape_err, Result};
use crate::linalg;
use crate::spectral::{check_cells, LowRankFactors, SparsePerturbation};

/// Power iteration settings for the operator-norm estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions { max_iter: 200, tol: 1e-9, seed: 0 }
    }
}

/// Sampled cells with multiplicities.
///
/// Observation sets never repeat a cell; a pattern may, which models
/// sampling with replacement. Repeated draws are merged into one cell
/// whose weight counts the draws.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPattern {
    shape: (usize, usize),
    rows: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SamplingPattern {
    pub fn from_observations(obs: &ObservationSet) -> Self {
        SamplingPattern {
            shape: obs.shape(),
            rows: obs.rows().to_vec(),
            cols: obs.cols().to_vec(),
            weights: vec![1.0; obs.n()],
        }
    }

    /// Distinct cells with unit weight.
    pub fn from_cells(shape: (usize, usize), rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.len() != cols.len() {
            return shape_err("row and column lists differ in length");
        }
        check_cells(&rows, &cols, shape)?;
        let weights = vec![1.0; rows.len()];
        Ok(SamplingPattern { shape, rows, cols, weights })
    }

    /// A multiset of draws; duplicates are merged.
    pub fn from_draws(shape: (usize, usize), draws: &[(usize, usize)]) -> Result<Self> {
        let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j) in draws {
            if i >= shape.0 || j >= shape.1 {
                return shape_err(format!("cell ({i}, {j}) outside a {}x{} grid", shape.0, shape.1));
            }
            *counts.entry((i, j)).or_insert(0.0) += 1.0;
        }
        let mut out = SamplingPattern { shape, rows: vec![], cols: vec![], weights: vec![] };
        for ((i, j), w) in counts {
            out.rows.push(i);
            out.cols.push(j);
            out.weights.push(w);
        }
        Ok(out)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of draws, counting repeats.
    pub fn n(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn uniform_full_grid(&self) -> Option<f64> {
        let w0 = *self.weights.first()?;
        (self.rows.len() == self.shape.0 * self.shape.1 && self.weights.iter().all(|&w| w == w0)).then_some(w0)
    }
}

/// Largest eigenvalue magnitude of a symmetric operator on `R^dim`.
fn power_norm(dim: usize, opts: &PowerOptions, mut start: DVector<f64>, mut op: impl FnMut(&DVector<f64>) -> DVector<f64>) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let norm0 = start.norm();
    if norm0 == 0.0 {
        return 0.0;
    }
    start /= norm0;
    let mut x = start;
    let mut est = 0.0;
    for _ in 0..opts.max_iter.max(1) {
        let y = op(&x);
        let next = y.norm();
        if next == 0.0 {
            return 0.0;
        }
        x = y / next;
        let done = (next - est).abs() <= opts.tol * next;
        est = next;
        if done {
            break;
        }
    }
    est
}

fn random_tangent(t: &TangentSpace, opts: &PowerOptions) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let raw = linalg::gaussian_vector(t.coord_len(), &mut rng);
    let mut x = t.from_coords(&raw);
    t.canonicalize(&mut x);
    t.to_coords(&x)
}

/// Operator norm of `c P_T A^* A P_T - P_T` with `c = tau_l d1 d2 / n`,
/// the restricted-isometry deviation of a sampling pattern on `T`.
///
/// A full grid sampled uniformly gives `|c w - 1|`, which is exactly zero
/// for unit weights and `tau_l = 1`.
pub fn estimate_rip(pattern: &SamplingPattern, t: &TangentSpace, tau_l: f64, opts: &PowerOptions) -> Result<f64> {
    if pattern.shape() != t.shape() {
        return shape_err("sampling pattern and tangent space shapes differ");
    }
    if t.coord_len() == 0 {
        return Ok(0.0);
    }
    let n = pattern.n();
    if n == 0.0 {
        return Ok(1.0);
    }
    let (d1, d2) = pattern.shape();
    let c = tau_l * (d1 * d2) as f64 / n;
    if let Some(w) = pattern.uniform_full_grid() {
        return Ok((c * w - 1.0).abs());
    }
    let start = random_tangent(t, opts);
    Ok(power_norm(start.len(), opts, start, |x| {
        // round-off leaks into the redundant coordinates, where the
        // operator would act as -I
        let mut xv = t.from_coords(x);
        t.drop_redundant(&mut xv);
        let mut vals = t.sample(&xv, pattern.rows(), pattern.cols());
        for (v, w) in vals.iter_mut().zip(pattern.weights()) {
            *v *= w;
        }
        let y = t.project_cells(pattern.rows(), pattern.cols(), &vals);
        t.to_coords(&y) * c - t.to_coords(&xv)
    }))
}

/// Restricted-orthogonality estimate between `T` and the support `omega`
/// of the sparse vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopEstimate {
    /// `‖P_Omega A_s^T A_L P_T‖`.
    pub norm: f64,
    /// `norm^2` times the larger of the two sampling scales.
    pub kappa: f64,
}

/// Cross-term norm `‖P_Omega A_s^T A_L P_T‖`. With `A_s = I` on a full
/// grid this is `‖P_T P_Omega‖`.
pub fn estimate_rop(
    obs: &ObservationSet,
    t: &TangentSpace,
    omega: &[usize],
    tau_l: f64,
    tau_s: f64,
    opts: &PowerOptions,
) -> Result<RopEstimate> {
    if obs.shape() != t.shape() {
        return shape_err("observation and tangent space shapes differ");
    }
    let d_s = obs.d_s();
    if let Some(&k) = omega.iter().find(|&&k| k >= d_s) {
        return shape_err(format!("support index {k} out of range for d_s = {d_s}"));
    }
    if omega.is_empty() || t.coord_len() == 0 || d_s == 0 {
        return Ok(RopEstimate { norm: 0.0, kappa: 0.0 });
    }
    let n = obs.n() as f64;
    let (d1, d2) = obs.shape();
    let scale = (tau_l * (d1 * d2) as f64 / n).max(tau_s * d_s as f64 / n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = linalg::gaussian_vector(omega.len(), &mut rng);
    let lambda = power_norm(omega.len(), opts, start, |z| {
        let mut s = DVector::zeros(d_s);
        for (&k, &v) in omega.iter().zip(z.iter()) {
            s[k] = v;
        }
        let a = match obs.sparse_model() {
            SparseModel::Dense(m) => m * &s,
            _ => s,
        };
        let y = t.project_cells(obs.rows(), obs.cols(), a.as_slice());
        let back = DVector::from_vec(t.sample(&y, obs.rows(), obs.cols()));
        let full = match obs.sparse_model() {
            SparseModel::Dense(m) => m.tr_mul(&back),
            _ => back,
        };
        DVector::from_iterator(omega.len(), omega.iter().map(|&k| full[k]))
    });
    let norm = lambda.sqrt();
    Ok(RopEstimate { norm, kappa: scale * norm * norm })
}

/// `‖P_T P_Omega‖` for a set of cells.
pub fn projection_product_norm(t: &TangentSpace, rows: &[usize], cols: &[usize], opts: &PowerOptions) -> Result<f64> {
    if rows.len() != cols.len() {
        return shape_err("row and column lists differ in length");
    }
    check_cells(rows, cols, t.shape())?;
    if rows.is_empty() || t.coord_len() == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = linalg::gaussian_vector(rows.len(), &mut rng);
    let lambda = power_norm(rows.len(), opts, start, |z| {
        let y = t.project_cells(rows, cols, z.as_slice());
        DVector::from_vec(t.sample(&y, rows, cols))
    });
    Ok(lambda.sqrt())
}

/// `‖tau_s (d_s/n) P_Omega A_s^T A_s P_Omega - P_Omega‖` on the support.
pub fn sparse_rip(obs: &ObservationSet, omega: &[usize], tau_s: f64) -> Result<f64> {
    let d_s = obs.d_s();
    if let Some(&k) = omega.iter().find(|&&k| k >= d_s) {
        return shape_err(format!("support index {k} out of range for d_s = {d_s}"));
    }
    if omega.is_empty() {
        return Ok(0.0);
    }
    let c = tau_s * d_s as f64 / obs.n() as f64;
    Ok(match obs.sparse_model() {
        SparseModel::None => 0.0,
        SparseModel::Identity => (c - 1.0).abs(),
        SparseModel::Dense(a) => {
            let sub = a.select_columns(omega);
            let g = sub.tr_mul(&sub) * c - DMatrix::identity(omega.len(), omega.len());
            g.symmetric_eigen().eigenvalues.iter().fold(0.0_f64, |m, e| m.max(e.abs()))
        }
    })
}

/// Smallest `mu` with `‖U_i‖^2 <= mu r / d1` and `‖V_j‖^2 <= mu r / d2`.
pub fn incoherence_of(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let r = u.ncols().max(v.ncols());
    if r == 0 {
        return 0.0;
    }
    let row_max = |m: &DMatrix<f64>| m.row_iter().map(|row| row.norm_squared()).fold(0.0, f64::max);
    let mu_u = if u.ncols() > 0 { u.nrows() as f64 / u.ncols() as f64 * row_max(u) } else { 0.0 };
    let mu_v = if v.ncols() > 0 { v.nrows() as f64 / v.ncols() as f64 * row_max(v) } else { 0.0 };
    mu_u.max(mu_v)
}

pub fn incoherence(lr: &LowRankFactors) -> f64 {
    incoherence_of(lr.u(), lr.v())
}

/// Largest fraction of nonzeros in any row (out of `d2`) or column
/// (out of `d1`).
pub fn alpha_sparsity_cells(rows: &[usize], cols: &[usize], shape: (usize, usize)) -> f64 {
    let (d1, d2) = shape;
    if rows.is_empty() || d1 == 0 || d2 == 0 {
        return 0.0;
    }
    let mut per_row = vec![0usize; d1];
    let mut per_col = vec![0usize; d2];
    for (&i, &j) in rows.iter().zip(cols) {
        per_row[i] += 1;
        per_col[j] += 1;
    }
    let r = *per_row.iter().max().unwrap_or(&0) as f64 / d2 as f64;
    let c = *per_col.iter().max().unwrap_or(&0) as f64 / d1 as f64;
    r.max(c)
}

pub fn alpha_sparsity(s: &SparsePerturbation) -> f64 {
    let p = s.pruned();
    alpha_sparsity_cells(p.rows(), p.cols(), p.shape())
}

/// Everything the recovery theory asks of an instance, measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub shape: (usize, usize),
    pub n: usize,
    pub rank: usize,
    pub mu: f64,
    /// Unsquared operator-norm deviations.
    pub kappa_l: f64,
    pub kappa_s: f64,
    pub kappa: f64,
    pub rop_norm: f64,
    pub alpha: f64,
}

/// Measures incoherence of `lr`, RIP on its tangent space, and, when a
/// sparse support is given, the sparse RIP, ROP and alpha.
pub fn diagnose(
    obs: &ObservationSet,
    lr: &LowRankFactors,
    omega: &[usize],
    tau_l: f64,
    tau_s: f64,
    opts: &PowerOptions,
) -> Result<DiagnosticsReport> {
    let t = TangentSpace::from_factors(lr);
    let kappa_l = estimate_rip(&obs.pattern(), &t, tau_l, opts)?;
    let kappa_s = sparse_rip(obs, omega, tau_s)?;
    let rop = estimate_rop(obs, &t, omega, tau_l, tau_s, opts)?;
    let alpha = match obs.sparse_model() {
        SparseModel::None => 0.0,
        SparseModel::Identity => {
            let rows: Vec<usize> = omega.iter().map(|&k| obs.rows()[k]).collect();
            let cols: Vec<usize> = omega.iter().map(|&k| obs.cols()[k]).collect();
            alpha_sparsity_cells(&rows, &cols, obs.shape())
        }
        SparseModel::Dense(_) => omega.len() as f64 / obs.d_s().max(1) as f64,
    };
    Ok(DiagnosticsReport {
        shape: obs.shape(),
        n: obs.n(),
        rank: lr.rank(),
        mu: incoherence(lr),
        kappa_l,
        kappa_s,
        kappa: rop.kappa,
        rop_norm: rop.norm,
        alpha,
    })
}
