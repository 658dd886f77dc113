//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the crate's solver, prox or SVD code.
#![allow(dead_code)]

use apgd_core::regularizers::Family;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Unweighted penalty written out from its piecewise definition.
pub fn phi_ref(family: Family, gamma: f64, t: f64) -> f64 {
    let t = t.abs();
    match family {
        Family::L1 => t,
        Family::Mcp => {
            if t <= gamma {
                t - t * t / (2.0 * gamma)
            } else {
                gamma / 2.0
            }
        }
        Family::CappedL1 => t.min(gamma / 2.0),
        Family::Scad => {
            let a = gamma;
            if t <= 1.0 {
                t
            } else if t <= a {
                (2.0 * a * t - t * t - 1.0) / (2.0 * (a - 1.0))
            } else {
                (a + 1.0) / 2.0
            }
        }
    }
}

/// Right derivative of [`phi_ref`] for `t > 0`.
pub fn dphi_ref(family: Family, gamma: f64, t: f64) -> f64 {
    match family {
        Family::L1 => 1.0,
        Family::Mcp => (1.0 - t / gamma).max(0.0),
        Family::CappedL1 => {
            if t < gamma / 2.0 {
                1.0
            } else {
                0.0
            }
        }
        Family::Scad => {
            if t <= 1.0 {
                1.0
            } else {
                ((gamma - t) / (gamma - 1.0)).max(0.0)
            }
        }
    }
}

fn golden(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Scalar prox by brute force: a grid over the segment between 0 and `y`
/// refined by golden-section search, compared against both endpoints.
/// Returns the minimizer and the gap between the two best local minima
/// (small gaps flag near ties of nonconvex penalties).
pub fn prox_oracle(family: Family, gamma: f64, weight: f64, y: f64, step: f64) -> (f64, f64) {
    let f = |x: f64| weight * phi_ref(family, gamma, x) + (x - y) * (x - y) / (2.0 * step);
    let (lo, hi) = if y >= 0.0 { (0.0, y) } else { (y, 0.0) };
    if lo == hi {
        return (0.0, f64::INFINITY);
    }
    let m = 4000;
    let xs: Vec<f64> = (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut cands = vec![(0.0, f(0.0)), (y, f(y))];
    for k in 0..=m {
        let left = if k > 0 { fs[k - 1] } else { f64::INFINITY };
        let right = if k < m { fs[k + 1] } else { f64::INFINITY };
        if fs[k] <= left && fs[k] <= right {
            let a = xs[k.saturating_sub(1)];
            let b = xs[(k + 1).min(m)];
            let x = golden(&f, a, b);
            cands.push((x, f(x)));
        }
    }
    cands.sort_by(|a, b| a.1.total_cmp(&b.1));
    let best = cands[0];
    let gap = cands
        .iter()
        .find(|c| (c.0 - best.0).abs() > 1e-6 * (1.0 + y.abs()))
        .map_or(f64::INFINITY, |c| c.1 - best.1);
    (best.0, gap)
}

/// Singular values, descending, and the thin factors.
pub fn dense_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = DVector::from_iterator(idx.len(), idx.iter().map(|&k| svd.singular_values[k]));
    let u = u.select_columns(&idx);
    let v = vt.transpose().select_columns(&idx);
    (u, s, v)
}

/// `sum_i weight phi(sigma_i(X)) + ‖X - Y‖^2 / (2 step)`.
pub fn matrix_prox_objective(family: Family, gamma: f64, weight: f64, x: &DMatrix<f64>, y: &DMatrix<f64>, step: f64) -> f64 {
    let s = x.singular_values();
    let pen: f64 = s.iter().map(|&t| weight * phi_ref(family, gamma, t)).sum();
    pen + (x - y).norm_squared() / (2.0 * step)
}

/// Matrix prox by gradient descent on the factorized objective
///
/// ```text
/// G(A, B) = w (‖A‖^2 + ‖B‖^2) / 2 - w sum_i q(sigma_i(A B^T)) + ‖A B^T - Y‖^2 / (2 step)
/// ```
///
/// with `q(t) = t - phi(t)`. The first term is the variational form of the
/// nuclear norm and `q` is differentiable at zero, so `G` is smooth and its
/// minimum equals the matrix prox objective's. Several random starts, best
/// objective wins.
pub fn matrix_prox_oracle(
    family: Family,
    gamma: f64,
    weight: f64,
    y: &DMatrix<f64>,
    step: f64,
    starts: usize,
    seed: u64,
) -> DMatrix<f64> {
    let (d1, d2) = y.shape();
    let k = d1.min(d2);
    let mut rng = rng(seed);
    let q_prime = |t: f64| 1.0 - dphi_ref(family, gamma, t);
    let grad_q = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let (u, s, v) = dense_svd(x);
        let d = DVector::from_iterator(s.len(), s.iter().map(|&t| if t > 0.0 { q_prime(t) } else { 0.0 }));
        &u * DMatrix::from_diagonal(&d) * v.transpose()
    };
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for start in 0..starts {
        let (u0, s0, v0) = dense_svd(y);
        // the first starts shrink the balanced factorization of Y, the rest are random
        let (mut a, mut b) = if start < 4 {
            let t = 1.0 - 0.25 * start as f64;
            let root = DMatrix::from_diagonal(&s0.map(|x| (t * x).sqrt()));
            (&u0 * &root, &v0 * &root)
        } else {
            (gaussian(d1, k, &mut rng) * 0.3, gaussian(d2, k, &mut rng) * 0.3)
        };
        let g_of = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> f64 {
            let x = a * b.transpose();
            let s = x.singular_values();
            let q: f64 = s.iter().map(|&t| t - phi_ref(family, gamma, t)).sum();
            weight * (a.norm_squared() + b.norm_squared()) / 2.0 - weight * q + (x - y).norm_squared() / (2.0 * step)
        };
        let grad = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> (DMatrix<f64>, DMatrix<f64>) {
            let x = a * b.transpose();
            let m = (&x - y) / step - grad_q(&x) * weight;
            (a * weight + &m * b, b * weight + m.transpose() * a)
        };
        // Armijo descent while it makes progress, then Barzilai-Borwein
        // steps, which need no function values near the minimum
        let mut eta = 0.5 / (weight + (1.0 + s0[0]) / step);
        let mut g = g_of(&a, &b);
        let (mut ga, mut gb) = grad(&a, &b);
        for _ in 0..5000 {
            let gn = ga.norm_squared() + gb.norm_squared();
            let na = &a - &ga * eta;
            let nb = &b - &gb * eta;
            let ng = g_of(&na, &nb);
            if ng <= g - 0.5 * eta * gn {
                a = na;
                b = nb;
                g = ng;
                (ga, gb) = grad(&a, &b);
                eta *= 1.5;
            } else {
                eta *= 0.5;
                if eta < 1e-8 {
                    break;
                }
            }
        }
        let tol = 1e-12 * (1.0 + y.norm());
        let mut eta = 1e-3;
        for _ in 0..50_000 {
            if (ga.norm_squared() + gb.norm_squared()).sqrt() < tol {
                break;
            }
            let na = &a - &ga * eta;
            let nb = &b - &gb * eta;
            let (nga, ngb) = grad(&na, &nb);
            let sa = &na - &a;
            let sb = &nb - &b;
            let ya = &nga - &ga;
            let yb = &ngb - &gb;
            let sy = sa.dot(&ya) + sb.dot(&yb);
            let ss = sa.norm_squared() + sb.norm_squared();
            eta = if sy > 0.0 { (ss / sy).min(10.0) } else { 1e-3 };
            a = na;
            b = nb;
            ga = nga;
            gb = ngb;
        }
        let x = &a * b.transpose();
        let f = matrix_prox_objective(family, gamma, weight, &x, y, step);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.unwrap().1
}

/// Shape parameter and a prox step inside the strong-convexity region,
/// scaled so thresholds fall among the singular values of a `2 N(0,1)`
/// 6x5 matrix.
pub fn random_prox_params(family: Family, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    match family {
        Family::L1 => (1.0, 0.5 + 4.0 * u),
        Family::Mcp => {
            let gamma = 1.0 + 5.0 * u;
            (gamma, (0.1 + 0.8 * v) * gamma)
        }
        Family::Scad => {
            let alpha = 2.5 + 3.0 * u;
            (alpha, (0.5 + 0.4 * v) * (alpha - 1.0))
        }
        Family::CappedL1 => {
            let c = 2.0 + 8.0 * u;
            (c, (0.1 + 0.8 * v) * c)
        }
    }
}

/// Orthogonal projector onto the tangent space at `(U, V)` as a
/// `d1 d2 x d1 d2` matrix acting on column-major vectorizations.
pub fn dense_tangent_projector(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = (u.nrows(), v.nrows());
    let pu = u * u.transpose();
    let pv = v * v.transpose();
    let i1 = DMatrix::<f64>::identity(d1, d1);
    let i2 = DMatrix::<f64>::identity(d2, d2);
    i2.kronecker(&pu) + pv.kronecker(&i1) - pv.kronecker(&pu)
}

fn sym_norm(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().fold(0.0_f64, |a, e| a.max(e.abs()))
}

/// `‖c P_T W P_T - P_T‖` with `W` the diagonal of per-cell weights and
/// `c = tau d1 d2 / sum(W)`, by a dense eigendecomposition.
pub fn dense_rip(u: &DMatrix<f64>, v: &DMatrix<f64>, cells: &[(usize, usize, f64)], tau: f64) -> f64 {
    let (d1, d2) = (u.nrows(), v.nrows());
    let pt = dense_tangent_projector(u, v);
    let mut w = DVector::zeros(d1 * d2);
    let mut total = 0.0;
    for &(i, j, x) in cells {
        w[i + j * d1] += x;
        total += x;
    }
    let c = tau * (d1 * d2) as f64 / total;
    let m = &pt * DMatrix::from_diagonal(&w) * &pt * c - &pt;
    sym_norm(&m)
}

/// `‖P_T P_Omega‖` for a set of cells.
pub fn dense_projection_product(u: &DMatrix<f64>, v: &DMatrix<f64>, cells: &[(usize, usize)]) -> f64 {
    let d1 = u.nrows();
    let pt = dense_tangent_projector(u, v);
    let idx: Vec<usize> = cells.iter().map(|&(i, j)| i + j * d1).collect();
    spectral(&pt.select_columns(&idx))
}

pub fn spectral(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Random orthonormal `d x r` basis.
pub fn orthonormal(d: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gaussian(d, r, rng).qr().q()
}

pub fn vec_dense(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Median of a sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
