use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{make_instance, metrics, InstanceParams, MetricsReport, ProblemKind};
use crate::error::{config_err, Result};
use crate::observe::io::fmt_f64;
use crate::observe::PowerOptions;
use crate::regularizers::Family;
use crate::solver::{solve, solve_and_audit, RegChoice, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    CompletionNoiseless,
    CompletionNoisy,
    RpcaNoiseless,
    RpcaNoisy,
    BiasComparison,
    TheoryAudit,
    Table2,
    NoiseScaling,
}

impl SuiteName {
    pub const ALL: [SuiteName; 8] = [
        SuiteName::CompletionNoiseless,
        SuiteName::CompletionNoisy,
        SuiteName::RpcaNoiseless,
        SuiteName::RpcaNoisy,
        SuiteName::BiasComparison,
        SuiteName::TheoryAudit,
        SuiteName::Table2,
        SuiteName::NoiseScaling,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteName::CompletionNoiseless => "completion_noiseless",
            SuiteName::CompletionNoisy => "completion_noisy",
            SuiteName::RpcaNoiseless => "rpca_noiseless",
            SuiteName::RpcaNoisy => "rpca_noisy",
            SuiteName::BiasComparison => "bias_comparison",
            SuiteName::TheoryAudit => "theory_audit",
            SuiteName::Table2 => "table2",
            SuiteName::NoiseScaling => "noise_scaling",
        }
    }

    fn default_seeds(&self) -> usize {
        match self {
            SuiteName::CompletionNoisy | SuiteName::Table2 => 5,
            SuiteName::NoiseScaling => 3,
            _ => 10,
        }
    }
}

impl std::str::FromStr for SuiteName {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match SuiteName::ALL.iter().find(|n| n.as_str() == s) {
            Some(n) => Ok(*n),
            None => config_err(format!("unknown suite `{s}`")),
        }
    }
}

impl std::fmt::Display for SuiteName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteOptions {
    /// Replicate `k` uses instance seed `seed + k`.
    pub seed: u64,
    /// Replicates per grid point; each suite has its own default.
    pub seeds: Option<usize>,
    /// Column of the table2 benchmark, 1 to 4.
    pub row: usize,
    /// Overrides the low-rank step multiplier of completion suites.
    pub tau_l: Option<f64>,
    pub power: PowerOptions,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 0, seeds: None, row: 1, tau_l: None, power: PowerOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub index: usize,
    pub label: String,
    pub seed: u64,
    pub kind: ProblemKind,
    pub params: InstanceParams,
    pub metrics: MetricsReport,
    /// Suite-specific measurements.
    pub extra: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub value: f64,
    /// Human-readable pass condition.
    pub threshold: String,
    pub pass: bool,
}

impl Predicate {
    fn new(name: &str, value: f64, threshold: impl Into<String>, pass: bool) -> Self {
        Predicate { name: name.into(), value, threshold: threshold.into(), pass }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: SuiteName,
    pub options: SuiteOptions,
    pub cells: Vec<SuiteCell>,
    pub predicates: Vec<Predicate>,
    pub seconds: f64,
}

pub const CELLS_HEADER: &str =
    "suite,cell,label,seed,d1,d2,r,p,alpha,noise_std,rfne,support_precision,support_recall,rank,nnz,iterations,converged,extra";

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.predicates.iter().all(|p| p.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per cell; wall times are left out so reruns compare equal.
    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CELLS_HEADER}")?;
        for c in &self.cells {
            let m = &c.metrics;
            let p = &c.params;
            let extra: Vec<String> = c.extra.iter().map(|(k, v)| format!("{k}={}", fmt_f64(*v))).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.suite,
                c.index,
                c.label,
                c.seed,
                p.d1,
                p.d2,
                p.r,
                fmt_f64(p.p),
                fmt_f64(p.alpha),
                fmt_f64(p.noise_std),
                fmt_f64(m.rfne),
                fmt_f64(m.support_precision),
                fmt_f64(m.support_recall),
                m.rank,
                m.nnz,
                m.iterations,
                m.converged,
                extra.join(";")
            )?;
        }
        Ok(())
    }

    pub fn write_predicates_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "suite,predicate,value,threshold,pass")?;
        for p in &self.predicates {
            writeln!(w, "{},{},{},{},{}", self.suite, p.name, fmt_f64(p.value), p.threshold, p.pass)?;
        }
        Ok(())
    }

    /// Writes `<suite>.json`, `<suite>_cells.csv` and `<suite>_predicates.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.json", self.suite)), self.to_json()?)?;
        let mut cells = Vec::new();
        self.write_cells_csv(&mut cells)?;
        std::fs::write(dir.join(format!("{}_cells.csv", self.suite)), cells)?;
        let mut preds = Vec::new();
        self.write_predicates_csv(&mut preds)?;
        std::fs::write(dir.join(format!("{}_predicates.csv", self.suite)), preds)?;
        Ok(())
    }
}

/// Published reference RFNE for the four columns of the table2 benchmark.
pub const TABLE2_RFNE: [f64; 4] = [3.28e-4, 2.90e-4, 1.69e-4, 1.96e-4];

pub fn table2_params(row: usize) -> Result<InstanceParams> {
    let (d1, d2, r, p, noise_std) = match row {
        1 => (1000, 500, 5, 0.3, 0.1),
        2 => (1000, 500, 5, 0.1, 0.02),
        3 => (5000, 1000, 10, 0.2, 0.1),
        4 => (5000, 1000, 10, 0.05, 0.02),
        _ => return config_err(format!("table2 row must be 1..=4, got {row}")),
    };
    Ok(InstanceParams { d1, d2, r, p, noise_std, ..Default::default() })
}

/// How a cell picks its solver settings.
#[derive(Clone, Debug)]
struct Recipe {
    label: String,
    kind: ProblemKind,
    params: InstanceParams,
    replicate: usize,
    cfg: SolverConfig,
    /// Set lambdas from the instance's noise level.
    noise_lambdas: bool,
    audit: bool,
}

fn completion_cfg(r: usize, tau_l: f64) -> SolverConfig {
    SolverConfig { lambda_l: Some(1.0), r0: Some(r), tau_l, ..Default::default() }
}

fn rpca_cfg(r: usize) -> SolverConfig {
    SolverConfig { lambda_l: Some(5.0), lambda_s: Some(1.0), r0: Some(r), ..Default::default() }
}

fn noiseless_completion() -> InstanceParams {
    InstanceParams { d1: 200, d2: 100, r: 3, p: 0.3, ..Default::default() }
}

fn noiseless_rpca() -> InstanceParams {
    InstanceParams { d1: 200, d2: 200, r: 5, p: 1.0, alpha: 0.05, ..Default::default() }
}

fn recipes(suite: SuiteName, opts: &SuiteOptions) -> Result<Vec<Recipe>> {
    let seeds = opts.seeds.unwrap_or_else(|| suite.default_seeds());
    if seeds == 0 {
        return config_err("a suite needs at least one seed");
    }
    let tau = opts.tau_l.unwrap_or(0.7);
    let mut out = Vec::new();
    let mut push = |label: &str, kind, params: &InstanceParams, k, cfg: SolverConfig, noise_lambdas, audit| {
        out.push(Recipe {
            label: label.into(),
            kind,
            params: params.clone(),
            replicate: k,
            cfg,
            noise_lambdas,
            audit,
        })
    };
    match suite {
        SuiteName::CompletionNoiseless => {
            let p = noiseless_completion();
            for k in 0..seeds {
                push("mcp", ProblemKind::Completion, &p, k, completion_cfg(p.r, tau), false, false);
            }
        }
        SuiteName::CompletionNoisy | SuiteName::Table2 => {
            let row = if suite == SuiteName::Table2 { opts.row } else { 1 };
            let p = table2_params(row)?;
            for k in 0..seeds {
                let cfg = SolverConfig { r0: Some(p.r), tau_l: tau, ..Default::default() };
                push(&format!("row{row}"), ProblemKind::Completion, &p, k, cfg, true, false);
            }
        }
        SuiteName::RpcaNoiseless => {
            let p = noiseless_rpca();
            for k in 0..seeds {
                push("mcp", ProblemKind::Rpca, &p, k, rpca_cfg(p.r), false, false);
            }
        }
        SuiteName::RpcaNoisy => {
            let p = InstanceParams { noise_std: 0.05, ..noiseless_rpca() };
            for k in 0..seeds {
                let cfg = SolverConfig { r0: Some(p.r), ..Default::default() };
                push("mcp", ProblemKind::Rpca, &p, k, cfg, true, false);
            }
        }
        SuiteName::BiasComparison => {
            let p = InstanceParams { noise_std: 0.1, ..noiseless_completion() };
            for k in 0..seeds {
                for (label, family) in [("mcp", Family::Mcp), ("l1", Family::L1)] {
                    let cfg = SolverConfig { r0: Some(p.r), tau_l: tau, reg_l: RegChoice::Auto(family), ..Default::default() };
                    push(label, ProblemKind::Completion, &p, k, cfg, true, false);
                }
            }
        }
        SuiteName::TheoryAudit => {
            let pc = noiseless_completion();
            let pr = noiseless_rpca();
            for k in 0..seeds {
                push("completion", ProblemKind::Completion, &pc, k, completion_cfg(pc.r, tau), false, true);
            }
            for k in 0..seeds {
                push("rpca", ProblemKind::Rpca, &pr, k, rpca_cfg(pr.r), false, true);
            }
        }
        SuiteName::NoiseScaling => {
            for nu in NOISE_LEVELS {
                let p = InstanceParams { d1: 400, d2: 200, r: 4, p: 0.3, noise_std: nu, ..Default::default() };
                for k in 0..seeds {
                    let cfg = SolverConfig { r0: Some(p.r), tau_l: tau, ..Default::default() };
                    push(&format!("nu{nu}"), ProblemKind::Completion, &p, k, cfg, true, false);
                }
            }
        }
    }
    Ok(out)
}

pub const NOISE_LEVELS: [f64; 3] = [0.02, 0.05, 0.1];

fn run_cell(index: usize, recipe: &Recipe, opts: &SuiteOptions) -> Result<SuiteCell> {
    let start = Instant::now();
    let seed = opts.seed.wrapping_add(recipe.replicate as u64);
    let inst = make_instance(recipe.kind, &recipe.params, seed)?;
    let mut cfg = recipe.cfg.clone();
    if recipe.noise_lambdas {
        cfg.noise_level = Some(inst.noise_abs);
    }
    let mut extra = BTreeMap::new();
    let (lambda_l, _) = cfg.lambdas(&inst.obs)?;
    let r = inst.l_star.rank();
    extra.insert("sigma_r".to_string(), inst.l_star.s()[r - 1]);
    extra.insert("lambda_l".to_string(), lambda_l);
    extra.insert("mu".to_string(), inst.mu);
    let solution = if recipe.audit {
        let (sol, report) = solve_and_audit(&inst.obs, &cfg, inst.truth(), &opts.power)?;
        extra.insert("audit_holds".to_string(), if report.holds() { 1.0 } else { 0.0 });
        extra.insert("audit_min_slack".to_string(), report.min_slack());
        extra.insert("kappa_l".to_string(), report.kappa_l);
        extra.insert("kappa_s".to_string(), report.kappa_s);
        extra.insert("kappa".to_string(), report.kappa);
        let worst = report.rows.iter().map(|r| r.ratio_l).fold(0.0, f64::max);
        extra.insert("max_ratio_l".to_string(), worst);
        sol
    } else {
        solve(&inst.obs, &cfg, Some(inst.truth()))?
    };
    let m = metrics(&solution, &inst, None);
    extra.insert("rfne_sq".to_string(), m.rfne * m.rfne);
    extra.insert("oracle_rate_rel".to_string(), m.oracle_rate / inst.l_star.frobenius_norm().powi(2));
    Ok(SuiteCell {
        index,
        label: recipe.label.clone(),
        seed,
        kind: recipe.kind,
        params: recipe.params.clone(),
        metrics: m,
        extra,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn exact(c: &SuiteCell) -> bool {
    c.metrics.rfne < 1e-6 && c.metrics.support_precision == 1.0 && c.metrics.support_recall == 1.0
}

fn predicates(suite: SuiteName, opts: &SuiteOptions, cells: &[SuiteCell]) -> Vec<Predicate> {
    let rfnes = |label: Option<&str>| -> Vec<f64> {
        cells.iter().filter(|c| label.is_none_or(|l| c.label == l)).map(|c| c.metrics.rfne).collect()
    };
    let mut out = Vec::new();
    match suite {
        SuiteName::CompletionNoiseless => {
            let med = median(&rfnes(None));
            out.push(Predicate::new("median_rfne", med, "< 1e-6", med < 1e-6));
            let iters = cells.iter().map(|c| c.metrics.iterations).max().unwrap_or(0) as f64;
            out.push(Predicate::new("max_iterations", iters, "<= 500", iters <= 500.0));
        }
        SuiteName::CompletionNoisy | SuiteName::Table2 => {
            let row = if suite == SuiteName::Table2 { opts.row } else { 1 };
            let target = TABLE2_RFNE[row - 1];
            let med = median(&rfnes(None));
            let ratio = med / target;
            out.push(Predicate::new("median_rfne_over_reference", ratio, "in [0.5, 2]", (0.5..=2.0).contains(&ratio)));
        }
        SuiteName::RpcaNoiseless => {
            let hits = cells.iter().filter(|c| exact(c)).count() as f64;
            let need = (0.9 * cells.len() as f64).ceil();
            out.push(Predicate::new("exact_separations", hits, format!(">= {need}"), hits >= need));
        }
        SuiteName::RpcaNoisy => {
            let med = median(&rfnes(None));
            out.push(Predicate::new("median_rfne", med, "< 0.05", med < 0.05));
            let recall = median(&cells.iter().map(|c| c.metrics.support_recall).collect::<Vec<_>>());
            out.push(Predicate::new("median_support_recall", recall, ">= 0.99", recall >= 0.99));
        }
        SuiteName::BiasComparison => {
            let mcp: Vec<&SuiteCell> = cells.iter().filter(|c| c.label == "mcp").collect();
            let l1: Vec<&SuiteCell> = cells.iter().filter(|c| c.label == "l1").collect();
            let wins = mcp.iter().zip(&l1).filter(|(a, b)| a.metrics.rfne < b.metrics.rfne).count() as f64;
            let need = (0.9 * mcp.len() as f64).ceil();
            out.push(Predicate::new("mcp_wins", wins, format!(">= {need}"), wins >= need));
            let above = mcp
                .iter()
                .filter(|c| c.extra["sigma_r"] > 3.0 * c.extra["lambda_l"] * opts.tau_l.unwrap_or(0.7))
                .count() as f64;
            out.push(Predicate::new("sigma_r_above_knee", above, format!("== {}", mcp.len()), above == mcp.len() as f64));
        }
        SuiteName::TheoryAudit => {
            let passing: Vec<&SuiteCell> = cells
                .iter()
                .filter(|c| if c.kind == ProblemKind::Rpca { exact(c) } else { c.metrics.rfne < 1e-6 })
                .collect();
            let holds = passing.iter().filter(|c| c.extra["audit_holds"] == 1.0).count() as f64;
            out.push(Predicate::new("passing_runs", passing.len() as f64, ">= 1", !passing.is_empty()));
            out.push(Predicate::new(
                "audits_holding",
                holds,
                format!("== {}", passing.len()),
                holds == passing.len() as f64,
            ));
        }
        SuiteName::NoiseScaling => {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for nu in NOISE_LEVELS {
                let sq: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.params.noise_std == nu)
                    .map(|c| c.metrics.rfne * c.metrics.rfne)
                    .collect();
                x.push(nu.ln());
                y.push(median(&sq).ln());
            }
            let slope = fit_slope(&x, &y);
            out.push(Predicate::new("loglog_slope", slope, "in [1.7, 2.3]", (1.7..=2.3).contains(&slope)));
        }
    }
    out
}

/// Runs every cell of `suite` in parallel and evaluates its pass
/// predicates. Cells come back in grid order regardless of scheduling.
pub fn run_suite(suite: SuiteName, opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let recipes = recipes(suite, opts)?;
    let cells = recipes
        .par_iter()
        .enumerate()
        .map(|(i, r)| run_cell(i, r, opts))
        .collect::<Result<Vec<_>>>()?;
    let predicates = predicates(suite, opts, &cells);
    Ok(SuiteReport { suite, options: opts.clone(), cells, predicates, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for n in SuiteName::ALL {
            assert_eq!(n.as_str().parse::<SuiteName>().unwrap(), n);
        }
        assert!("nope".parse::<SuiteName>().is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((fit_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-12);
        assert!(table2_params(5).is_err());
    }

    #[test]
    fn small_suite_is_reproducible() {
        let opts = SuiteOptions { seeds: Some(2), ..Default::default() };
        let a = run_suite(SuiteName::CompletionNoiseless, &opts).unwrap();
        let b = run_suite(SuiteName::CompletionNoiseless, &opts).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_cells_csv(&mut ca).unwrap();
        b.write_cells_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.cells.len(), 2);
        assert!(a.passed());
    }
}
