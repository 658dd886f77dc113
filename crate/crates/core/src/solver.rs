//! Alternating proximal gradient descent for
//!
//! ```text
//! min  lambda_L / (d1 d2) * sum_i phi_L(sigma_i(L)) + lambda_s / d_s * sum_i phi_s(s_i)
//!      + 1 / (2n) * ‖A_L(L) + A_s s - b‖^2
//! ```
//!
//! Each iteration takes a gradient step in `L` with step `tau_L d1 d2 / n`,
//! applies the spectral prox with combined step `tau_L lambda_L`, then does
//! the same for `s` with step `tau_s d_s / n`, using the updated `L`.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::observe::{
    alpha_sparsity_cells, estimate_rip, estimate_rop, io::fmt_f64, sparse_rip, ObservationSet, PowerOptions,
    SparseModel, TangentSpace,
};
use crate::regularizers::{Family, RegularizerSpec};
use crate::spectral::{difference_norm, lrssvd, spectral_prox, LowRankFactors, LrssvdOptions, SparsePerturbation};

/// Penalty choice in a config: a full spec, or only a family whose shape
/// parameter follows the current threshold `th = tau * lambda`
/// (MCP knee and capped-l1 cap `3 th`, SCAD knot `max(3.7, 1 + 3 th)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegChoice {
    Spec(RegularizerSpec),
    Auto(Family),
}

impl Default for RegChoice {
    fn default() -> Self {
        RegChoice::Auto(Family::Mcp)
    }
}

impl RegChoice {
    /// The concrete penalty for prox step `step`.
    pub fn resolve(&self, step: f64) -> Result<RegularizerSpec> {
        match *self {
            RegChoice::Spec(spec) => Ok(spec),
            RegChoice::Auto(family) => {
                let th = 3.0 * step;
                let gamma = match family {
                    Family::L1 => 1.0,
                    Family::Mcp | Family::CappedL1 => th,
                    Family::Scad => (1.0 + th).max(3.7),
                };
                RegularizerSpec::new(family, gamma, 1.0)
            }
        }
    }

    pub fn family(&self) -> Family {
        match self {
            RegChoice::Spec(s) => s.family(),
            RegChoice::Auto(f) => *f,
        }
    }
}

/// Geometric decrease of both lambdas: iteration `k` uses
/// `lambda * max(start * decay^k, floor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continuation {
    pub start: f64,
    pub decay: f64,
    #[serde(default = "unit")]
    pub floor: f64,
}

fn unit() -> f64 {
    1.0
}

impl Continuation {
    pub fn multiplier(&self, k: usize) -> f64 {
        (self.start * self.decay.powi(k.min(i32::MAX as usize) as i32)).max(self.floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Low-rank penalty strength; derived from `noise_level` when absent.
    pub lambda_l: Option<f64>,
    pub lambda_s: Option<f64>,
    /// Absolute noise standard deviation used for the default lambdas.
    pub noise_level: Option<f64>,
    pub lambda_c1: f64,
    pub lambda_c2: f64,
    pub tau_l: f64,
    pub tau_s: f64,
    pub reg_l: RegChoice,
    pub reg_s: RegChoice,
    /// Rank cap. When absent it is set to the number of singular values
    /// above threshold in the first iteration plus 5.
    pub r0: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub continuation: Option<Continuation>,
    /// Halve both steps whenever the objective increases.
    pub backtracking: bool,
    pub svd_oversample: usize,
    pub svd_min_sweeps: usize,
    pub svd_max_sweeps: usize,
    pub svd_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_l: None,
            lambda_s: None,
            noise_level: None,
            lambda_c1: 2.0,
            lambda_c2: 2.0,
            tau_l: 1.0,
            tau_s: 1.0,
            reg_l: RegChoice::default(),
            reg_s: RegChoice::default(),
            r0: None,
            max_iter: 500,
            tol: 1e-9,
            continuation: None,
            backtracking: false,
            svd_oversample: 5,
            svd_min_sweeps: 3,
            svd_max_sweeps: 500,
            svd_tol: 1e-10,
            seed: 0,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        config_err(format!("{name} must be positive and finite, got {x}"))
    }
}

impl SolverConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Lambdas in effect for `obs`, after applying the noise-based
    /// defaults `c1 nu sqrt(p d log d)` and `c2 nu sqrt(p log d)`.
    pub fn lambdas(&self, obs: &ObservationSet) -> Result<(f64, f64)> {
        let (d1, d2) = obs.shape();
        let p = obs.n() as f64 / (d1 * d2) as f64;
        let d = d1.max(d2) as f64;
        let log_d = d.ln().max(1.0);
        let from_noise = |c: f64, extra: f64| self.noise_level.map(|nu| c * nu * (p * extra * log_d).sqrt());
        let lambda_l = match self.lambda_l.or_else(|| from_noise(self.lambda_c1, d)) {
            Some(l) => l,
            None => return config_err("lambda_l is required when no noise_level is given"),
        };
        let lambda_s = if obs.d_s() == 0 {
            self.lambda_s.unwrap_or(0.0)
        } else {
            match self.lambda_s.or_else(|| from_noise(self.lambda_c2, 1.0)) {
                Some(l) => l,
                None => return config_err("lambda_s is required when no noise_level is given"),
            }
        };
        Ok((lambda_l, lambda_s))
    }

    /// Checks every invariant that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        positive("tau_l", self.tau_l)?;
        positive("tau_s", self.tau_s)?;
        positive("tol", self.tol)?;
        positive("svd_tol", self.svd_tol)?;
        positive("lambda_c1", self.lambda_c1)?;
        positive("lambda_c2", self.lambda_c2)?;
        if let Some(l) = self.lambda_l {
            positive("lambda_l", l)?;
        }
        if let Some(l) = self.lambda_s {
            positive("lambda_s", l)?;
        }
        if let Some(nu) = self.noise_level {
            positive("noise_level", nu)?;
        }
        if self.max_iter == 0 {
            return config_err("max_iter must be at least 1");
        }
        if self.r0 == Some(0) {
            return config_err("r0 must be at least 1");
        }
        if self.svd_max_sweeps == 0 {
            return config_err("svd_max_sweeps must be at least 1");
        }
        if let Some(c) = &self.continuation {
            positive("continuation.start", c.start)?;
            positive("continuation.floor", c.floor)?;
            if !(c.decay > 0.0 && c.decay <= 1.0) {
                return config_err(format!("continuation.decay must lie in (0, 1], got {}", c.decay));
            }
            if c.start < c.floor {
                return config_err("continuation.start must be at least continuation.floor");
            }
        }
        Ok(())
    }

    fn max_multiplier(&self) -> f64 {
        self.continuation.map_or(1.0, |c| c.start.max(c.floor))
    }
}

/// Everything fixed for one solve: lambdas, scalings and penalties.
#[derive(Clone, Debug)]
struct Plan {
    lambda_l: f64,
    lambda_s: f64,
    c_l: f64,
    c_s: f64,
}

impl Plan {
    fn new(obs: &ObservationSet, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if obs.n() == 0 {
            return config_err("no observations");
        }
        let (lambda_l, lambda_s) = cfg.lambdas(obs)?;
        positive("lambda_l", lambda_l)?;
        if obs.d_s() > 0 {
            positive("lambda_s", lambda_s)?;
        }
        let (d1, d2) = obs.shape();
        let n = obs.n() as f64;
        let plan = Plan {
            lambda_l,
            lambda_s,
            c_l: cfg.tau_l * (d1 * d2) as f64 / n,
            c_s: cfg.tau_s * obs.d_s() as f64 / n,
        };
        // explicit penalties must stay strongly convex over the whole schedule
        let top = cfg.max_multiplier();
        let lowest = cfg.continuation.map_or(1.0, |c| c.floor.min(c.start));
        for m in [top, lowest] {
            plan.reg_l(cfg, m)?.check_step(cfg.tau_l * lambda_l * m)?;
            if obs.d_s() > 0 {
                plan.reg_s(cfg, m)?.check_step(cfg.tau_s * lambda_s * m)?;
            }
        }
        Ok(plan)
    }

    fn reg_l(&self, cfg: &SolverConfig, mult: f64) -> Result<RegularizerSpec> {
        cfg.reg_l.resolve(cfg.tau_l * self.lambda_l * mult)
    }

    fn reg_s(&self, cfg: &SolverConfig, mult: f64) -> Result<RegularizerSpec> {
        cfg.reg_s.resolve(cfg.tau_s * self.lambda_s * mult)
    }
}

/// Iterate handed to observers.
#[derive(Clone, Copy, Debug)]
pub struct Iterate<'a> {
    pub k: usize,
    pub l: &'a LowRankFactors,
    pub s: &'a DVector<f64>,
}

/// Known truth for error tracking and auditing.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    pub l: &'a LowRankFactors,
    /// Empty for problems without a sparse part.
    pub s: &'a DVector<f64>,
    /// Additive measurement noise, when known.
    pub noise: Option<&'a DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
    pub rank: usize,
    pub nnz: usize,
    pub err_l: Option<f64>,
    pub err_s: Option<f64>,
    pub seconds: f64,
    pub lambda_l: f64,
    pub lambda_s: f64,
    pub svd_sweeps: usize,
    pub svd_converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "iter,objective,residual,rank,nnz,err_L,err_s,seconds";

impl SolveTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                fmt_f64(r.objective),
                fmt_f64(r.residual),
                r.rank,
                r.nnz,
                opt(r.err_l),
                opt(r.err_s),
                fmt_f64(r.seconds)
            )?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// True when every record except wall time matches bit for bit.
    pub fn same_path(&self, other: &SolveTrace) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iter == b.iter
                    && a.objective.to_bits() == b.objective.to_bits()
                    && a.residual.to_bits() == b.residual.to_bits()
                    && a.rank == b.rank
                    && a.nnz == b.nnz
                    && a.err_l.map(f64::to_bits) == b.err_l.map(f64::to_bits)
                    && a.err_s.map(f64::to_bits) == b.err_s.map(f64::to_bits)
            })
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub l: LowRankFactors,
    pub s: DVector<f64>,
    pub trace: SolveTrace,
    pub converged: bool,
    pub iterations: usize,
}

impl Solution {
    pub fn support(&self) -> Vec<usize> {
        self.s.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect()
    }
}

/// Value of the objective for the given lambdas.
pub fn objective(obs: &ObservationSet, l: &LowRankFactors, s: &DVector<f64>, cfg: &SolverConfig) -> Result<f64> {
    let plan = Plan::new(obs, cfg)?;
    let residual = obs.residual(l, s)?;
    Ok(objective_parts(obs, l, s, &residual, &plan, cfg, 1.0)?.0)
}

fn objective_parts(
    obs: &ObservationSet,
    l: &LowRankFactors,
    s: &DVector<f64>,
    residual: &DVector<f64>,
    plan: &Plan,
    cfg: &SolverConfig,
    mult: f64,
) -> Result<(f64, f64)> {
    let (d1, d2) = obs.shape();
    let mut value = plan.lambda_l * mult / (d1 * d2) as f64 * plan.reg_l(cfg, mult)?.phi_sum(l.s().iter());
    if obs.d_s() > 0 {
        value += plan.lambda_s * mult / obs.d_s() as f64 * plan.reg_s(cfg, mult)?.phi_sum(s.iter());
    }
    let rnorm = residual.norm();
    value += rnorm * rnorm / (2.0 * obs.n() as f64);
    Ok((value, rnorm))
}

struct LStep {
    l: LowRankFactors,
    sweeps: usize,
    converged: bool,
}

struct Stepper<'a> {
    obs: &'a ObservationSet,
    cfg: &'a SolverConfig,
    plan: Plan,
    r0: Option<usize>,
}

impl Stepper<'_> {
    fn svd_opts(&self, rank: usize, floor: f64, k: usize) -> LrssvdOptions {
        LrssvdOptions {
            rank,
            oversample: self.cfg.svd_oversample,
            min_sweeps: self.cfg.svd_min_sweeps,
            max_sweeps: self.cfg.svd_max_sweeps,
            tol: self.cfg.svd_tol,
            floor: Some(floor),
            seed: self.cfg.seed.wrapping_add(k as u64),
        }
    }

    /// Gradient step in `L` followed by the spectral prox.
    fn step_l(&mut self, l: &LowRankFactors, s: &DVector<f64>, k: usize, mult: f64, scale: f64) -> Result<LStep> {
        let residual = self.obs.residual(l, s)?;
        let y = self.obs.adjoint_l(&(residual * (-self.plan.c_l * scale)))?;
        let step = self.cfg.tau_l * self.plan.lambda_l * mult * scale;
        let reg = self.plan.reg_l(self.cfg, mult)?;
        reg.check_step(step)?;
        let th = reg.threshold(step);
        let dmin = self.obs.shape().0.min(self.obs.shape().1);
        let (mut rank, auto) = match (self.r0, self.cfg.r0) {
            (_, Some(cap)) => (cap.min(dmin), false),
            (Some(r), None) => (r.min(dmin), false),
            (None, None) => (10.min(dmin), true),
        };
        loop {
            let out = lrssvd(l, &y, &self.svd_opts(rank, th, k))?;
            let above = out.factors.s().iter().filter(|&&x| x > th).count();
            if auto && above == rank && rank < dmin {
                rank = (2 * rank).min(dmin);
                continue;
            }
            if auto {
                self.r0 = Some((above + 5).min(dmin));
            }
            return Ok(LStep { l: spectral_prox(&out.factors, &reg, step)?, sweeps: out.sweeps, converged: out.converged });
        }
    }

    /// Gradient step in `s` at the updated `L`, then the entrywise prox.
    fn step_s(&self, l: &LowRankFactors, s: &DVector<f64>, mult: f64, scale: f64) -> Result<DVector<f64>> {
        if self.obs.d_s() == 0 {
            return Ok(DVector::zeros(0));
        }
        let residual = self.obs.residual(l, s)?;
        let grad = self.obs.adjoint_s(&residual)?;
        let tilde = s - grad * (self.plan.c_s * scale);
        let step = self.cfg.tau_s * self.plan.lambda_s * mult * scale;
        Ok(self.plan.reg_s(self.cfg, mult)?.prox_vector(&tilde, step)?.values)
    }
}

/// One `L` update from `(l, s)`, with the configured step and penalty.
pub fn step_l(obs: &ObservationSet, l: &LowRankFactors, s: &DVector<f64>, cfg: &SolverConfig) -> Result<LowRankFactors> {
    let plan = Plan::new(obs, cfg)?;
    check_state(obs, l, s)?;
    let mut st = Stepper { obs, cfg, plan, r0: None };
    Ok(st.step_l(l, s, 1, cfg.continuation.map_or(1.0, |c| c.multiplier(0)), 1.0)?.l)
}

/// One `s` update; pass the already updated `L`.
pub fn step_s(obs: &ObservationSet, l: &LowRankFactors, s: &DVector<f64>, cfg: &SolverConfig) -> Result<DVector<f64>> {
    let plan = Plan::new(obs, cfg)?;
    check_state(obs, l, s)?;
    let st = Stepper { obs, cfg, plan, r0: None };
    st.step_s(l, s, cfg.continuation.map_or(1.0, |c| c.multiplier(0)), 1.0)
}

fn check_state(obs: &ObservationSet, l: &LowRankFactors, s: &DVector<f64>) -> Result<()> {
    if l.shape() != obs.shape() {
        return shape_err("iterate shape differs from the observations");
    }
    if s.len() != obs.d_s() {
        return shape_err(format!("sparse iterate has length {}, expected {}", s.len(), obs.d_s()));
    }
    Ok(())
}

pub fn solve(obs: &ObservationSet, cfg: &SolverConfig, truth: Option<GroundTruth<'_>>) -> Result<Solution> {
    solve_with(obs, cfg, truth, |_| {})
}

/// [`solve`] that also hands every iterate, starting with the zero
/// initialization, to `observer`.
pub fn solve_with(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    truth: Option<GroundTruth<'_>>,
    mut observer: impl FnMut(Iterate<'_>),
) -> Result<Solution> {
    let plan = Plan::new(obs, cfg)?;
    if let Some(t) = &truth {
        check_state(obs, t.l, t.s)?;
    }
    let (d1, d2) = obs.shape();
    let start = Instant::now();
    let mut st = Stepper { obs, cfg, plan, r0: None };
    let mut l = LowRankFactors::zeros(d1, d2);
    let mut s = DVector::zeros(obs.d_s());
    let errors = |l: &LowRankFactors, s: &DVector<f64>| match &truth {
        Some(t) => (Some(difference_norm(t.l, l)), Some((t.s - s).norm())),
        None => (None, None),
    };
    let mult0 = cfg.continuation.map_or(1.0, |c| c.multiplier(0));
    let residual = obs.residual(&l, &s)?;
    let (mut obj, rnorm) = objective_parts(obs, &l, &s, &residual, &st.plan, cfg, mult0)?;
    let (err_l, err_s) = errors(&l, &s);
    let mut trace = SolveTrace::default();
    trace.records.push(TraceRecord {
        iter: 0,
        objective: obj,
        residual: rnorm,
        rank: 0,
        nnz: 0,
        err_l,
        err_s,
        seconds: 0.0,
        lambda_l: st.plan.lambda_l * mult0,
        lambda_s: st.plan.lambda_s * mult0,
        svd_sweeps: 0,
        svd_converged: true,
    });
    observer(Iterate { k: 0, l: &l, s: &s });

    let mut scale = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iter {
        let mult = cfg.continuation.map_or(1.0, |c| c.multiplier(k - 1));
        let (new_l, new_s, lstep, new_obj, rnorm) = loop {
            let lstep = st.step_l(&l, &s, k, mult, scale)?;
            let new_s = st.step_s(&lstep.l, &s, mult, scale)?;
            let residual = obs.residual(&lstep.l, &new_s)?;
            let (new_obj, rnorm) = objective_parts(obs, &lstep.l, &new_s, &residual, &st.plan, cfg, mult)?;
            if cfg.backtracking && new_obj > obj && scale > 1e-12 {
                scale *= 0.5;
                continue;
            }
            break (lstep.l.clone(), new_s, lstep, new_obj, rnorm);
        };
        let change_l = difference_norm(&new_l, &l) / (1.0 + l.frobenius_norm());
        let change_s = if s.is_empty() { 0.0 } else { (&new_s - &s).norm() / (1.0 + s.norm()) };
        l = new_l;
        s = new_s;
        obj = new_obj;
        iterations = k;
        let (err_l, err_s) = errors(&l, &s);
        trace.records.push(TraceRecord {
            iter: k,
            objective: obj,
            residual: rnorm,
            rank: l.rank(),
            nnz: s.iter().filter(|&&x| x != 0.0).count(),
            err_l,
            err_s,
            seconds: start.elapsed().as_secs_f64(),
            lambda_l: st.plan.lambda_l * mult,
            lambda_s: st.plan.lambda_s * mult,
            svd_sweeps: lstep.sweeps,
            svd_converged: lstep.converged,
        });
        observer(Iterate { k, l: &l, s: &s });
        if !obj.is_finite() {
            break;
        }
        let settled = cfg.continuation.is_none_or(|c| mult <= c.floor);
        if settled && change_l.max(change_s) < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Solution { l, s, trace, converged, iterations })
}

/// One row of the recursive-bound check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub k: usize,
    pub lhs_l: f64,
    pub rhs_l: f64,
    pub slack_l: f64,
    pub lhs_s: f64,
    pub rhs_s: f64,
    pub slack_s: f64,
    /// `‖Delta_L^{k+1}‖^2 / ‖Delta_L^k‖^2`.
    pub ratio_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kappa_l: f64,
    pub kappa_s: f64,
    pub kappa: f64,
    pub noise_term_l: f64,
    pub noise_term_s: f64,
    pub bias_term_l: f64,
    pub bias_term_s: f64,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.slack_l >= 0.0 && r.slack_s >= 0.0)
    }

    pub fn min_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.slack_l.min(r.slack_s)).fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates both sides of the per-iteration error recursion
///
/// ```text
/// ‖D_L^{k+1}‖^2 <= kL ‖D_L^k‖^2 + k tau_L ‖D_s^k‖^2 + (tau_L d1 d2 / n) ‖P_T A_L^* E‖^2 + lambda_L r phi_L'(sigma_r)
/// ‖D_s^{k+1}‖^2 <= ks ‖D_s^k‖^2 + k tau_s ‖D_L^{k+1}‖^2 + (tau_s d_s / n) ‖P_Omega A_s^T E‖^2
///                  + lambda_s alpha d_s phi_s'(s_min - lambda_s)
/// ```
///
/// along a list of iterates. The constants are measured: `kL` is the
/// largest squared restricted-isometry deviation over the tangent spaces
/// spanned by `L*` and each `L^k`, `ks` and `k` likewise over the union of
/// the true and iterate supports. A round-off allowance of `(1e-12 scale)^2` is added to
/// each right side.
pub fn contraction_audit(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    truth: GroundTruth<'_>,
    iterates: &[(LowRankFactors, DVector<f64>)],
    opts: &PowerOptions,
) -> Result<AuditReport> {
    let plan = Plan::new(obs, cfg)?;
    check_state(obs, truth.l, truth.s)?;
    let (d1, d2) = obs.shape();
    let d_s = obs.d_s();
    let pattern = obs.pattern();
    let true_support: Vec<usize> = (0..d_s).filter(|&i| truth.s[i] != 0.0).collect();

    let mut kappa_l: f64 = 0.0;
    let mut kappa_s: f64 = 0.0;
    let mut kappa: f64 = 0.0;
    for (l, s) in iterates {
        check_state(obs, l, s)?;
        let t = TangentSpace::union(truth.l, l)?;
        kappa_l = kappa_l.max(estimate_rip(&pattern, &t, cfg.tau_l, opts)?.powi(2));
        if d_s > 0 {
            let mut omega = true_support.clone();
            omega.extend((0..d_s).filter(|&i| s[i] != 0.0 && truth.s[i] == 0.0));
            omega.sort_unstable();
            kappa_s = kappa_s.max(sparse_rip(obs, &omega, cfg.tau_s)?.powi(2));
            kappa = kappa.max(estimate_rop(obs, &t, &omega, cfg.tau_l, cfg.tau_s, opts)?.kappa);
        }
    }

    let (noise_term_l, noise_term_s) = match truth.noise {
        Some(e) if e.norm() > 0.0 => {
            let t = TangentSpace::from_factors(truth.l);
            let pt = t.project_cells(obs.rows(), obs.cols(), e.as_slice()).norm();
            let nl = plan.c_l * pt * pt;
            let ns = if d_s > 0 {
                let g = obs.adjoint_s(e)?;
                let on: f64 = true_support.iter().map(|&i| g[i] * g[i]).sum();
                plan.c_s * on
            } else {
                0.0
            };
            (nl, ns)
        }
        _ => (0.0, 0.0),
    };

    let r = truth.l.rank();
    let bias_term_l = if r == 0 {
        0.0
    } else {
        let reg = plan.reg_l(cfg, 1.0)?;
        plan.lambda_l * r as f64 * reg.phi_derivative(truth.l.s()[r - 1])?
    };
    let bias_term_s = if true_support.is_empty() {
        0.0
    } else {
        let reg = plan.reg_s(cfg, 1.0)?;
        let s_min = true_support.iter().map(|&i| truth.s[i].abs()).fold(f64::INFINITY, f64::min);
        let arg = s_min - plan.lambda_s;
        let slope = if arg > 0.0 { reg.phi_derivative(arg)? } else { reg.weight() };
        let alpha = match obs.sparse_model() {
            SparseModel::Identity => {
                let rows: Vec<usize> = true_support.iter().map(|&k| obs.rows()[k]).collect();
                let cols: Vec<usize> = true_support.iter().map(|&k| obs.cols()[k]).collect();
                alpha_sparsity_cells(&rows, &cols, (d1, d2))
            }
            _ => true_support.len() as f64 / d_s as f64,
        };
        plan.lambda_s * alpha * d_s as f64 * slope
    };

    let floor_l = (1e-12 * truth.l.frobenius_norm().max(1.0)).powi(2);
    let floor_s = (1e-12 * (truth.s.norm() + truth.l.frobenius_norm()).max(1.0)).powi(2);
    let sq = |x: f64| x * x;
    let mut rows = Vec::new();
    for k in 0..iterates.len().saturating_sub(1) {
        let (lk, sk) = &iterates[k];
        let (ln, sn) = &iterates[k + 1];
        let dl_k = sq(difference_norm(truth.l, lk));
        let dl_n = sq(difference_norm(truth.l, ln));
        let ds_k = (truth.s - sk).norm_squared();
        let ds_n = (truth.s - sn).norm_squared();
        let rhs_l = kappa_l * dl_k + kappa * cfg.tau_l * ds_k + noise_term_l + bias_term_l + floor_l;
        let (lhs_s, rhs_s) = if d_s > 0 {
            (ds_n, kappa_s * ds_k + kappa * cfg.tau_s * dl_n + noise_term_s + bias_term_s + floor_s)
        } else {
            (0.0, 0.0)
        };
        rows.push(AuditRow {
            k,
            lhs_l: dl_n,
            rhs_l,
            slack_l: rhs_l - dl_n,
            lhs_s,
            rhs_s,
            slack_s: rhs_s - lhs_s,
            ratio_l: if dl_k > 0.0 { dl_n / dl_k } else { 0.0 },
        });
    }
    Ok(AuditReport { kappa_l, kappa_s, kappa, noise_term_l, noise_term_s, bias_term_l, bias_term_s, rows })
}

/// Runs [`solve_with`] while keeping every iterate, then audits them.
pub fn solve_and_audit(
    obs: &ObservationSet,
    cfg: &SolverConfig,
    truth: GroundTruth<'_>,
    opts: &PowerOptions,
) -> Result<(Solution, AuditReport)> {
    let mut iterates = Vec::new();
    let sol = solve_with(obs, cfg, Some(truth), |it| iterates.push((it.l.clone(), it.s.clone())))?;
    let report = contraction_audit(obs, cfg, truth, &iterates, opts)?;
    Ok((sol, report))
}

/// Sparse-matrix view of a vector living on the observed cells.
pub fn scatter_on_cells(obs: &ObservationSet, s: &DVector<f64>) -> Result<SparsePerturbation> {
    if obs.kind() != crate::observe::ObservationKind::Identity {
        return config_err("only identity sparse models live on the observed cells");
    }
    Ok(obs.adjoint_l(s)?.pruned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_grid(d1: usize, d2: usize) -> (Vec<usize>, Vec<usize>) {
        ((0..d1 * d2).map(|k| k / d2).collect(), (0..d1 * d2).map(|k| k % d2).collect())
    }

    #[test]
    fn zero_data_stops_at_zero() {
        let (rows, cols) = full_grid(4, 3);
        let obs = ObservationSet::rpca((4, 3), rows, cols, DVector::zeros(12)).unwrap();
        let cfg = SolverConfig { lambda_l: Some(0.5), lambda_s: Some(0.1), ..Default::default() };
        let sol = solve(&obs, &cfg, None).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.l.rank(), 0);
        assert!(sol.s.iter().all(|&x| x == 0.0));
        assert_eq!(sol.trace.records.len(), 2);
    }

    #[test]
    fn config_rejections() {
        let (rows, cols) = full_grid(3, 3);
        let obs = ObservationSet::completion((3, 3), rows, cols, DVector::zeros(9)).unwrap();
        let bad = |cfg: SolverConfig| solve(&obs, &cfg, None).is_err();
        assert!(bad(SolverConfig::default()));
        assert!(bad(SolverConfig { lambda_l: Some(-1.0), ..Default::default() }));
        assert!(bad(SolverConfig { lambda_l: Some(1.0), tol: 0.0, ..Default::default() }));
        let mcp = RegularizerSpec::mcp(0.5, 1.0).unwrap();
        assert!(bad(SolverConfig { lambda_l: Some(1.0), reg_l: RegChoice::Spec(mcp), ..Default::default() }));
        assert!(SolverConfig::from_json(r#"{"lambda_l": 1.0, "bogus": 2}"#).is_err());
        let cfg = SolverConfig::from_json(r#"{"lambda_l": 1.0, "reg_l": "scad", "reg_s": {"family": "mcp", "gamma": 3.0}}"#)
            .unwrap();
        assert_eq!(cfg.reg_l, RegChoice::Auto(Family::Scad));
        assert_eq!(cfg.reg_s, RegChoice::Spec(RegularizerSpec::mcp(3.0, 1.0).unwrap()));
    }

    #[test]
    fn noise_defaults() {
        let (rows, cols) = full_grid(4, 4);
        let obs = ObservationSet::rpca((4, 4), rows, cols, DVector::zeros(16)).unwrap();
        let cfg = SolverConfig { noise_level: Some(0.5), ..Default::default() };
        let (ll, ls) = cfg.lambdas(&obs).unwrap();
        let log_d = 4f64.ln();
        assert!((ll - 2.0 * 0.5 * (4.0 * log_d).sqrt()).abs() < 1e-15);
        assert!((ls - 2.0 * 0.5 * log_d.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn continuation_schedule() {
        let c = Continuation { start: 8.0, decay: 0.5, floor: 1.0 };
        assert_eq!(c.multiplier(0), 8.0);
        assert_eq!(c.multiplier(2), 2.0);
        assert_eq!(c.multiplier(10), 1.0);
    }

    #[test]
    fn trace_csv_header() {
        let trace = SolveTrace {
            records: vec![TraceRecord {
                iter: 0,
                objective: 0.5,
                residual: 1.0,
                rank: 0,
                nnz: 0,
                err_l: None,
                err_s: Some(2.0),
                seconds: 0.0,
                lambda_l: 1.0,
                lambda_s: 1.0,
                svd_sweeps: 0,
                svd_converged: true,
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TRACE_HEADER}\n0,0.5,1,0,0,,2,0\n"));
    }
}
