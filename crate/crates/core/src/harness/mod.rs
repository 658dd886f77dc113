//! Synthetic instances, recovery metrics, rating-file ingestion and the
//! experiment suites.

mod ratings;
mod suites;

pub use ratings::{read_movielens, write_movielens, Rating, Ratings};
pub use suites::{
    fit_slope, median, run_suite, table2_params, Predicate, SuiteCell, SuiteName, SuiteOptions, SuiteReport, NOISE_LEVELS,
    TABLE2_RFNE,
};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::linalg;
use crate::observe::{incoherence, ObservationSet};
use crate::solver::{GroundTruth, Solution};
use crate::spectral::{difference_norm, LowRankFactors, SparsePerturbation};

/// Random rank-`r` matrix with Haar-like singular vectors and singular
/// values uniform in `[1, 2]`, rescaled so `‖L‖_F = sqrt(d1 d2)`.
pub fn gen_low_rank(d1: usize, d2: usize, r: usize, seed: u64) -> Result<LowRankFactors> {
    if r == 0 || r > d1.min(d2) {
        return config_err(format!("rank {r} must lie in 1..={}", d1.min(d2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = linalg::orthonormalize(&linalg::gaussian_matrix(d1, r, &mut rng));
    let v = linalg::orthonormalize(&linalg::gaussian_matrix(d2, r, &mut rng));
    let mut s: Vec<f64> = (0..r).map(|_| rng.random_range(1.0..=2.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut s = DVector::from_vec(s);
    s *= ((d1 * d2) as f64).sqrt() / s.norm();
    let (mut u, mut v) = (u, v);
    linalg::fix_signs(&mut u, &mut v);
    LowRankFactors::new(u, s, v)
}

/// Sparse corruption on a `d1 x d2` grid: cells visited in random order
/// and kept while their row holds fewer than `floor(alpha d2)` and their
/// column fewer than `floor(alpha d1)` entries, up to `floor(alpha d1 d2)`
/// entries. Magnitudes are uniform in `range` with random signs.
pub fn gen_sparse_corruption(
    shape: (usize, usize),
    alpha: f64,
    range: (f64, f64),
    seed: u64,
) -> Result<SparsePerturbation> {
    let (d1, d2) = shape;
    if !(0.0..=1.0).contains(&alpha) {
        return config_err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    if !(range.0.is_finite() && range.1.is_finite() && 0.0 < range.0 && range.0 <= range.1) {
        return config_err(format!("magnitude range must satisfy 0 < lo <= hi, got {range:?}"));
    }
    if alpha == 0.0 || d1 == 0 || d2 == 0 {
        return Ok(SparsePerturbation::empty(shape));
    }
    let row_cap = (alpha * d2 as f64).floor() as usize;
    let col_cap = (alpha * d1 as f64).floor() as usize;
    if row_cap == 0 || col_cap == 0 {
        return config_err(format!("alpha {alpha} allows no entry per row or column on a {d1}x{d2} grid"));
    }
    let target = (alpha * (d1 * d2) as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..d1 * d2).collect();
    order.shuffle(&mut rng);
    let mut per_row = vec![0usize; d1];
    let mut per_col = vec![0usize; d2];
    let mut cells = Vec::with_capacity(target);
    for c in order {
        if cells.len() == target {
            break;
        }
        let (i, j) = (c / d2, c % d2);
        if per_row[i] < row_cap && per_col[j] < col_cap {
            per_row[i] += 1;
            per_col[j] += 1;
            cells.push((i, j));
        }
    }
    cells.sort_unstable();
    let vals = cells.iter().map(|_| signed_magnitude(&mut rng, range)).collect();
    SparsePerturbation::new(cells.iter().map(|c| c.0).collect(), cells.iter().map(|c| c.1).collect(), vals, shape)
}

/// Vector of length `d_s` with `round(alpha d_s)` nonzeros.
pub fn gen_sparse_vector(d_s: usize, alpha: f64, range: (f64, f64), seed: u64) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return config_err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (alpha * d_s as f64).round() as usize;
    let mut out = DVector::zeros(d_s);
    let mut idx = index::sample(&mut rng, d_s, k).into_vec();
    idx.sort_unstable();
    for i in idx {
        out[i] = signed_magnitude(&mut rng, range);
    }
    Ok(out)
}

fn signed_magnitude(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let m = if range.0 == range.1 { range.0 } else { rng.random_range(range.0..=range.1) };
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Completion,
    Rpca,
    General,
}

impl std::str::FromStr for ProblemKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "completion" => Ok(ProblemKind::Completion),
            "rpca" => Ok(ProblemKind::Rpca),
            "general" => Ok(ProblemKind::General),
            other => config_err(format!("unknown problem kind `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceParams {
    pub d1: usize,
    pub d2: usize,
    pub r: usize,
    /// Fraction of observed cells.
    pub p: f64,
    /// Corruption density: per-row/column cap for rpca, nonzero fraction
    /// of the sparse vector for general.
    pub alpha: f64,
    /// Noise standard deviation relative to the mean absolute entry of `L*`.
    pub noise_std: f64,
    /// Corruption magnitudes; defaults to `[‖L*‖_inf, 2 ‖L*‖_inf]`.
    pub magnitude: Option<(f64, f64)>,
    /// Length of the sparse vector for the general kind.
    pub d_s: usize,
}

impl Default for InstanceParams {
    fn default() -> Self {
        InstanceParams { d1: 200, d2: 100, r: 3, p: 0.3, alpha: 0.0, noise_std: 0.0, magnitude: None, d_s: 50 }
    }
}

/// Ground truth, noise and the measurements built from them.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub params: InstanceParams,
    pub seed: u64,
    pub l_star: LowRankFactors,
    pub s_star: DVector<f64>,
    pub noise: DVector<f64>,
    pub obs: ObservationSet,
    /// Measured incoherence of `L*`.
    pub mu: f64,
    /// Absolute noise standard deviation.
    pub noise_abs: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
}

impl ProblemInstance {
    pub fn truth(&self) -> GroundTruth<'_> {
        GroundTruth { l: &self.l_star, s: &self.s_star, noise: Some(&self.noise) }
    }

    /// Largest deviation of `b` from `A_L(L*) + A_s s* + E`.
    pub fn consistency_error(&self) -> Result<f64> {
        let rebuilt = self.obs.apply(&self.l_star, &self.s_star)? + &self.noise;
        Ok((rebuilt - self.obs.b()).amax())
    }

    pub fn true_support(&self) -> Vec<usize> {
        (0..self.s_star.len()).filter(|&i| self.s_star[i] != 0.0).collect()
    }
}

/// Sorted uniform sample of `round(p d1 d2)` distinct cells.
pub fn sample_cells(d1: usize, d2: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(p > 0.0 && p <= 1.0) {
        return config_err(format!("sampling fraction must lie in (0, 1], got {p}"));
    }
    let total = d1 * d2;
    let n = ((p * total as f64).round() as usize).clamp(1, total);
    let mut idx = if n == total { (0..total).collect() } else { index::sample(rng, total, n).into_vec() };
    idx.sort_unstable();
    Ok((idx.iter().map(|&c| c / d2).collect(), idx.iter().map(|&c| c % d2).collect()))
}

/// Builds an instance from independent seeded streams for the factors,
/// the sample, the corruption and the noise.
pub fn make_instance(kind: ProblemKind, params: &InstanceParams, seed: u64) -> Result<ProblemInstance> {
    let InstanceParams { d1, d2, r, p, alpha, noise_std, .. } = *params;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return config_err(format!("noise_std must be nonnegative, got {noise_std}"));
    }
    let stream = |k: u64| seed.wrapping_mul(4).wrapping_add(k);
    let l_star = gen_low_rank(d1, d2, r, stream(0))?;
    let dense = l_star.to_dense();
    let mean_abs = dense.iter().map(|x| x.abs()).sum::<f64>() / (d1 * d2) as f64;
    let max_abs = dense.amax();
    let mut rng = ChaCha8Rng::seed_from_u64(stream(1));
    let (rows, cols) = sample_cells(d1, d2, p, &mut rng)?;
    let n = rows.len();
    let range = params.magnitude.unwrap_or((max_abs, 2.0 * max_abs));

    let noise_abs = noise_std * mean_abs;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream(3));
    let noise = linalg::gaussian_vector(n, &mut noise_rng) * noise_abs;

    let low = DVector::from_iterator(n, rows.iter().zip(&cols).map(|(&i, &j)| dense[(i, j)]));
    let (obs, s_star) = match kind {
        ProblemKind::Completion => {
            let b = &low + &noise;
            (ObservationSet::completion((d1, d2), rows, cols, b)?, DVector::zeros(0))
        }
        ProblemKind::Rpca => {
            let corruption = gen_sparse_corruption((d1, d2), alpha, range, stream(2))?.to_dense();
            let s = DVector::from_iterator(n, rows.iter().zip(&cols).map(|(&i, &j)| corruption[(i, j)]));
            let b = &low + &s + &noise;
            (ObservationSet::rpca((d1, d2), rows, cols, b)?, s)
        }
        ProblemKind::General => {
            let d_s = params.d_s;
            let s = gen_sparse_vector(d_s, alpha, range, stream(2))?;
            let mut a_rng = ChaCha8Rng::seed_from_u64(stream(2) ^ 0x5eed);
            let a_s = linalg::gaussian_matrix(n, d_s, &mut a_rng) / (d_s.max(1) as f64).sqrt();
            let b = &low + &a_s * &s + &noise;
            (ObservationSet::general((d1, d2), rows, cols, b, a_s)?, s)
        }
    };
    Ok(ProblemInstance {
        kind,
        params: params.clone(),
        seed,
        mu: incoherence(&l_star),
        l_star,
        s_star,
        noise,
        obs,
        noise_abs,
        mean_abs,
        max_abs,
    })
}

/// Held-out entries for NMAE.
#[derive(Clone, Debug, PartialEq)]
pub struct Holdout {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
    /// Rating scale `(min, max)`.
    pub scale: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rfne: f64,
    pub nmae: Option<f64>,
    pub support_precision: f64,
    pub support_recall: f64,
    pub oracle_rate: f64,
    pub rank: usize,
    pub nnz: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Mean absolute error over the holdout divided by the rating range.
pub fn nmae(pred: impl Fn(usize, usize) -> f64, holdout: &Holdout) -> f64 {
    if holdout.values.is_empty() {
        return 0.0;
    }
    let total: f64 = holdout
        .rows
        .iter()
        .zip(&holdout.cols)
        .zip(&holdout.values)
        .map(|((&i, &j), &v)| (pred(i, j) - v).abs())
        .sum();
    total / holdout.values.len() as f64 / (holdout.scale.1 - holdout.scale.0)
}

/// `(d1 d2 / n) r nu^2 d log d`, the reference squared error of least
/// squares restricted to the true tangent space.
pub fn oracle_rate(shape: (usize, usize), n: usize, r: usize, noise_abs: f64) -> f64 {
    let (d1, d2) = shape;
    let d = d1.max(d2) as f64;
    (d1 * d2) as f64 / n as f64 * r as f64 * noise_abs * noise_abs * d * d.ln()
}

/// Precision and recall of `found` against `truth`; empty sets count as
/// perfect.
pub fn support_scores(found: &[usize], truth: &[usize]) -> (f64, f64) {
    let hits = found.iter().filter(|i| truth.binary_search(i).is_ok()).count() as f64;
    let precision = if found.is_empty() { 1.0 } else { hits / found.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    (precision, recall)
}

pub fn rfne(estimate: &LowRankFactors, truth: &LowRankFactors) -> f64 {
    let denom = truth.frobenius_norm();
    if denom == 0.0 {
        return estimate.frobenius_norm();
    }
    difference_norm(estimate, truth) / denom
}

pub fn metrics(solution: &Solution, instance: &ProblemInstance, holdout: Option<&Holdout>) -> MetricsReport {
    let found = solution.support();
    let (support_precision, support_recall) = support_scores(&found, &instance.true_support());
    MetricsReport {
        rfne: rfne(&solution.l, &instance.l_star),
        nmae: holdout.map(|h| nmae(|i, j| solution.l.entry(i, j), h)),
        support_precision,
        support_recall,
        oracle_rate: oracle_rate(instance.obs.shape(), instance.obs.n(), instance.params.r, instance.noise_abs),
        rank: solution.l.rank(),
        nnz: found.len(),
        iterations: solution.iterations,
        converged: solution.converged,
    }
}

/// Dense `d1 x d2` view of a sparse vector living on observed cells.
pub fn cells_to_dense(obs: &ObservationSet, s: &DVector<f64>) -> DMatrix<f64> {
    let (d1, d2) = obs.shape();
    let mut out = DMatrix::zeros(d1, d2);
    for ((&i, &j), &v) in obs.rows().iter().zip(obs.cols()).zip(s.iter()) {
        out[(i, j)] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observe::alpha_sparsity;

    #[test]
    fn low_rank_generator() {
        let l = gen_low_rank(30, 20, 4, 7).unwrap();
        assert_eq!(l.rank(), 4);
        assert!((l.frobenius_norm() - (600f64).sqrt()).abs() < 1e-10);
        assert!(l.s()[0] / l.s()[3] <= 2.0 + 1e-12);
        assert_eq!(gen_low_rank(30, 20, 4, 7).unwrap(), l);
        assert_eq!(gen_low_rank(5, 5, 5, 1).unwrap().rank(), 5);
        assert!(gen_low_rank(5, 4, 5, 1).is_err());
    }

    #[test]
    fn corruption_respects_caps() {
        let s = gen_sparse_corruption((40, 30), 0.1, (1.0, 2.0), 3).unwrap();
        assert!(alpha_sparsity(&s) <= 0.1 + 1e-12);
        assert!(s.vals().iter().all(|v| (1.0..=2.0).contains(&v.abs())));
        assert_eq!(gen_sparse_corruption((40, 30), 0.0, (1.0, 2.0), 3).unwrap().nnz(), 0);
        assert!(gen_sparse_corruption((40, 30), 0.01, (1.0, 2.0), 3).is_err());
        let full = gen_sparse_corruption((4, 3), 1.0, (1.0, 1.0), 0).unwrap();
        assert_eq!(full.nnz(), 12);
    }

    #[test]
    fn instances_are_consistent() {
        let params = InstanceParams { d1: 20, d2: 15, r: 2, p: 0.5, alpha: 0.1, noise_std: 0.1, ..Default::default() };
        for kind in [ProblemKind::Completion, ProblemKind::Rpca, ProblemKind::General] {
            let inst = make_instance(kind, &params, 11).unwrap();
            assert!(inst.consistency_error().unwrap() <= 1e-14);
            assert_eq!(inst.obs.n(), 150);
        }
        let rpca = make_instance(ProblemKind::Rpca, &params, 11).unwrap();
        assert_eq!(rpca.obs.d_s(), rpca.obs.n());
    }

    #[test]
    fn metric_edges() {
        let truth = gen_low_rank(10, 8, 2, 1).unwrap();
        assert_eq!(rfne(&LowRankFactors::zeros(10, 8), &truth), 1.0);
        assert!(rfne(&truth, &truth) < 1e-14);
        assert_eq!(support_scores(&[1, 2], &[2, 3]), (0.5, 0.5));
        assert_eq!(support_scores(&[], &[]), (1.0, 1.0));
        let h = Holdout { rows: vec![0, 1], cols: vec![0, 0], values: vec![1.0, 5.0], scale: (1.0, 5.0) };
        assert_eq!(nmae(|_, _| 3.0, &h), 0.5);
    }
}
