//! `apgd`: solve matrix completion and robust PCA problems from files,
//! measure the recovery diagnostics of an instance, and run the benchmark
//! suites.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apgd_core::harness::{
    make_instance, metrics, nmae, read_movielens, rfne, run_suite, support_scores, table2_params, Holdout,
    InstanceParams, ProblemInstance, ProblemKind, SuiteName, SuiteOptions,
};
use apgd_core::observe::io::{read_dense_file, read_observations, read_triplets_csv, write_observations};
use apgd_core::observe::{diagnose, ObservationKind, ObservationSet, PowerOptions};
use apgd_core::regularizers::Family;
use apgd_core::solver::{solve, GroundTruth, RegChoice, SolverConfig};
use apgd_core::spectral::{lrssvd, LowRankFactors, LrssvdOptions};
use apgd_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "apgd", version, about = "Low-rank plus sparse recovery with nonconvex penalties")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Matrix completion from sampled entries.
    Complete(CompleteArgs),
    /// Low-rank plus sparse separation of a (possibly partially observed) matrix.
    Rpca(RpcaArgs),
    /// Incoherence, RIP, ROP and sparsity measurements for an instance.
    Diagnose(DiagnoseArgs),
    /// Run a benchmark suite and evaluate its pass predicates.
    Bench(BenchArgs),
    /// Write a synthetic instance with its ground truth and a run config.
    Gen(GenArgs),
}

#[derive(Args, Clone, Debug)]
struct SolveFlags {
    /// Run config JSON with solver settings and file paths.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for synthetic instances, holdout splits and SVD start vectors.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Penalty family for both parts (l1, capped, scad, mcp).
    #[arg(long)]
    reg: Option<Family>,
    #[arg(long)]
    lambda_l: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    rank_cap: Option<usize>,
    /// Absolute noise level used to derive default lambdas.
    #[arg(long)]
    noise_level: Option<f64>,
    #[arg(long)]
    tau_l: Option<f64>,
    #[arg(long)]
    tau_s: Option<f64>,
    /// Directory holding ground-truth U.csv, S.csv, V.csv and optionally sparse.csv.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Built-in synthetic problem used instead of an input file.
    #[arg(long)]
    synth: Option<String>,
    /// Matrix shape as D1xD2, when the input does not fix it.
    #[arg(long, value_parser = parse_shape)]
    shape: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    /// Observed entries as triplet CSV (`i,j,value`, 0-based) or MatrixMarket.
    input: Option<PathBuf>,
    /// Held-out entries for NMAE, same formats as the input.
    #[arg(long)]
    holdout: Option<PathBuf>,
    /// Rating scale as LO,HI for NMAE.
    #[arg(long, value_parser = parse_pair)]
    scale: Option<(f64, f64)>,
    /// Treat the input as a `user::item::rating[::timestamp]` file and hold out part of it.
    #[arg(long)]
    movielens: bool,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    #[command(flatten)]
    flags: SolveFlags,
}

#[derive(Args, Debug)]
struct RpcaArgs {
    /// Observations as triplets or MatrixMarket, or a dense CSV with --dense.
    input: Option<PathBuf>,
    /// Read the input as a dense comma-separated matrix.
    #[arg(long)]
    dense: bool,
    #[command(flatten)]
    flags: SolveFlags,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Observations as triplets or MatrixMarket.
    input: PathBuf,
    /// completion or rpca.
    #[arg(long, default_value = "completion")]
    kind: ObservationKind,
    #[arg(long, value_parser = parse_shape)]
    shape: Option<(usize, usize)>,
    /// Directory with U.csv, S.csv, V.csv of the low-rank matrix.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Rank of the spectral estimate used when no factors are given.
    #[arg(long)]
    rank: Option<usize>,
    /// Triplet file with the sparse part's nonzeros (rpca).
    #[arg(long)]
    support: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    tau_l: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// One of completion_noiseless, completion_noisy, rpca_noiseless, rpca_noisy,
    /// bias_comparison, theory_audit, table2, noise_scaling.
    suite: SuiteName,
    #[arg(long)]
    seed: u64,
    /// Replicates per grid point.
    #[arg(long)]
    seeds: Option<usize>,
    /// Benchmark column for the table2 suite, 1 to 4.
    #[arg(long, default_value_t = 1)]
    row: usize,
    #[arg(long)]
    tau_l: Option<f64>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// completion, rpca or general.
    #[arg(long, default_value = "completion")]
    kind: ProblemKind,
    #[arg(long, default_value_t = 200)]
    d1: usize,
    #[arg(long, default_value_t = 100)]
    d2: usize,
    #[arg(long, default_value_t = 3)]
    r: usize,
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Noise std relative to the mean absolute entry.
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write observations as MatrixMarket instead of triplet CSV.
    #[arg(long)]
    mtx: bool,
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected D1xD2, got `{s}`"))?;
    Ok((a.trim().parse().map_err(|_| format!("bad row count `{a}`"))?, b.trim().parse().map_err(|_| format!("bad column count `{b}`"))?))
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got `{s}`"))?;
    Ok((a.trim().parse().map_err(|_| format!("bad number `{a}`"))?, b.trim().parse().map_err(|_| format!("bad number `{b}`"))?))
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Solver settings matched to the built-in problem generators.
fn recipe(kind: ProblemKind, params: &InstanceParams) -> SolverConfig {
    let noiseless = params.noise_std == 0.0;
    match kind {
        ProblemKind::Completion => SolverConfig {
            lambda_l: noiseless.then_some(1.0),
            r0: Some(params.r),
            tau_l: 0.7,
            ..Default::default()
        },
        _ => SolverConfig {
            lambda_l: noiseless.then_some(5.0),
            lambda_s: noiseless.then_some(1.0),
            r0: Some(params.r),
            ..Default::default()
        },
    }
}

fn synth_params(kind: ProblemKind, name: &str) -> Result<InstanceParams> {
    let small_rpca = InstanceParams { d1: 200, d2: 200, r: 5, p: 1.0, alpha: 0.05, ..Default::default() };
    match (kind, name) {
        (ProblemKind::Completion, "small") => Ok(InstanceParams { d1: 200, d2: 100, r: 3, p: 0.3, ..Default::default() }),
        (ProblemKind::Completion, "noisy") => {
            Ok(InstanceParams { d1: 200, d2: 100, r: 3, p: 0.3, noise_std: 0.1, ..Default::default() })
        }
        (ProblemKind::Completion, row) if row.starts_with("table2-row") => {
            let k: usize = row["table2-row".len()..].parse().map_err(|_| config_error(format!("unknown preset `{row}`")))?;
            table2_params(k)
        }
        (ProblemKind::Rpca, "small") => Ok(small_rpca),
        (ProblemKind::Rpca, "noisy") => Ok(InstanceParams { noise_std: 0.05, ..small_rpca }),
        _ => Err(config_error(format!("unknown synthetic preset `{name}`"))),
    }
}

fn apply_flags(cfg: &mut SolverConfig, f: &SolveFlags) {
    if let Some(x) = f.seed {
        cfg.seed = x;
    }
    if let Some(x) = f.tol {
        cfg.tol = x;
    }
    if let Some(x) = f.max_iter {
        cfg.max_iter = x;
    }
    if let Some(fam) = f.reg {
        cfg.reg_l = RegChoice::Auto(fam);
        cfg.reg_s = RegChoice::Auto(fam);
    }
    if let Some(x) = f.lambda_l {
        cfg.lambda_l = Some(x);
    }
    if let Some(x) = f.lambda_s {
        cfg.lambda_s = Some(x);
    }
    if let Some(x) = f.rank_cap {
        cfg.r0 = Some(x);
    }
    if let Some(x) = f.noise_level {
        cfg.noise_level = Some(x);
    }
    if let Some(x) = f.tau_l {
        cfg.tau_l = x;
    }
    if let Some(x) = f.tau_s {
        cfg.tau_s = x;
    }
}

/// Config, problem data and optional truth for one solve.
struct Job {
    run: RunConfig,
    obs: ObservationSet,
    truth_l: Option<LowRankFactors>,
    truth_s: Option<DVector<f64>>,
    noise: Option<DVector<f64>>,
    holdout: Option<Holdout>,
    instance: Option<ProblemInstance>,
}

fn prepare(kind: ProblemKind, flags: &SolveFlags, input: Option<&Path>, load: impl FnOnce(&Path, Option<(usize, usize)>) -> Result<ObservationSet>) -> Result<Job> {
    let mut instance = None;
    let mut base = SolverConfig::default();
    if let Some(name) = &flags.synth {
        let params = synth_params(kind, name)?;
        let inst = make_instance(kind, &params, flags.seed.unwrap_or(0))?;
        base = recipe(kind, &params);
        if params.noise_std > 0.0 {
            base.noise_level = Some(inst.noise_abs);
        }
        instance = Some(inst);
    }
    let mut run = match &flags.config {
        Some(path) => config::load(path, base)?,
        None => RunConfig { solver: base, ..Default::default() },
    };
    apply_flags(&mut run.solver, flags);
    if flags.shape.is_some() {
        run.shape = flags.shape;
    }
    if flags.out.is_some() {
        run.out = flags.out.clone();
    }
    if flags.truth.is_some() {
        run.truth = flags.truth.clone();
    }
    if let Some(inst) = instance {
        return Ok(Job {
            run,
            obs: inst.obs.clone(),
            truth_l: Some(inst.l_star.clone()),
            truth_s: Some(inst.s_star.clone()),
            noise: Some(inst.noise.clone()),
            holdout: None,
            instance: Some(inst),
        });
    }
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| run.observations.clone())
        .ok_or_else(|| config_error("no observations: pass an input file, `observations` in --config, or --synth"))?;
    let obs = load(&path, run.shape)?;
    let (truth_l, truth_s) = match &run.truth {
        Some(dir) => {
            let l = output::read_factors(dir)?;
            if l.shape() != obs.shape() {
                return Err(Error::Shape("ground truth shape differs from the observations".into()));
            }
            let sparse = dir.join("sparse.csv");
            let s = if obs.d_s() > 0 && sparse.exists() {
                output::read_sparse_on_cells(&sparse, &obs)?
            } else {
                DVector::zeros(obs.d_s())
            };
            (Some(l), Some(s))
        }
        None => (None, None),
    };
    Ok(Job { run, obs, truth_l, truth_s, noise: None, holdout: None, instance: None })
}

fn read_holdout(path: &Path, scale: Option<(f64, f64)>, obs: &ObservationSet) -> Result<Holdout> {
    let t = read_triplets_or_mtx(path)?;
    let (d1, d2) = obs.shape();
    if let Some(&(i, j, _)) = t.iter().find(|&&(i, j, _)| i >= d1 || j >= d2) {
        return Err(Error::Shape(format!("holdout cell ({i}, {j}) lies outside the {d1}x{d2} matrix")));
    }
    let scale = scale.unwrap_or_else(|| {
        obs.b().iter().chain(t.iter().map(|e| &e.2)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    if !(scale.1 > scale.0) {
        return Err(config_error("rating scale must satisfy LO < HI"));
    }
    Ok(Holdout {
        rows: t.iter().map(|e| e.0).collect(),
        cols: t.iter().map(|e| e.1).collect(),
        values: t.iter().map(|e| e.2).collect(),
        scale,
    })
}

fn read_triplets_or_mtx(path: &Path) -> Result<Vec<(usize, usize, f64)>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        Ok(apgd_core::observe::io::read_matrix_market(reader)?.entries)
    } else {
        read_triplets_csv(reader)
    }
}

fn run_job(command: &str, job: Job) -> Result<()> {
    let Job { run, obs, truth_l, truth_s, noise, holdout, instance } = job;
    let cfg = &run.solver;
    let out = run.out.clone().unwrap_or_else(|| PathBuf::from(format!("{command}-out")));
    let truth = match (&truth_l, &truth_s) {
        (Some(l), Some(s)) => Some(GroundTruth { l, s, noise: noise.as_ref() }),
        _ => None,
    };
    let sol = solve(&obs, cfg, truth)?;
    std::fs::create_dir_all(&out)?;
    output::write_factors(&out, &sol.l)?;
    sol.trace.write_csv_file(&out.join("trace.csv"))?;
    let mut files = vec!["U.csv", "S.csv", "V.csv", "trace.csv", "metrics.json", "manifest.json"];
    if obs.d_s() > 0 {
        apgd_core::observe::io::write_triplets_file(&out.join("sparse.csv"), &output::sparse_triplets(&obs, &sol.s))?;
        files.push("sparse.csv");
    }
    let last = sol.trace.records.last().expect("trace holds the initial record");
    let mut m = json!({
        "rank": sol.l.rank(),
        "nnz": sol.support().len(),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "objective": last.objective,
        "residual": last.residual,
    });
    if let Some(inst) = &instance {
        m["synthetic"] = serde_json::to_value(metrics(&sol, inst, holdout.as_ref()))?;
    } else if let (Some(l), Some(s)) = (&truth_l, &truth_s) {
        m["rfne"] = json!(rfne(&sol.l, l));
        if obs.d_s() > 0 {
            let truth_support: Vec<usize> = (0..s.len()).filter(|&i| s[i] != 0.0).collect();
            let (precision, recall) = support_scores(&sol.support(), &truth_support);
            m["support_precision"] = json!(precision);
            m["support_recall"] = json!(recall);
        }
    }
    if let Some(h) = &holdout {
        m["nmae"] = json!(nmae(|i, j| sol.l.entry(i, j), h));
    }
    output::write_json(&out.join("metrics.json"), &m)?;
    output::write_json(&out.join("manifest.json"), &output::manifest(command, &obs, cfg, &sol, &files)?)?;
    println!("{}", serde_json::to_string(&m)?);
    if !sol.converged {
        eprintln!("warning: stopped after {} iterations without meeting tol {}", sol.iterations, cfg.tol);
    }
    Ok(())
}

fn cmd_complete(a: CompleteArgs) -> Result<()> {
    let seed = a.flags.seed.unwrap_or(0);
    let mut job = if a.movielens {
        let path = a.input.clone().ok_or_else(|| config_error("--movielens needs an input file"))?;
        let ratings = read_movielens(std::io::BufReader::new(std::fs::File::open(&path)?))?;
        let scale = a.scale.unwrap_or_else(|| ratings.scale());
        let (obs, holdout) = ratings.split(a.holdout_fraction, scale, seed)?;
        let mut job = prepare(ProblemKind::Completion, &a.flags, Some(&path), |_, _| Ok(obs))?;
        job.holdout = Some(holdout);
        job
    } else {
        prepare(ProblemKind::Completion, &a.flags, a.input.as_deref(), |p, shape| {
            read_observations(p, ObservationKind::EntrySampling, shape)
        })?
    };
    if job.holdout.is_none() {
        if let Some(path) = a.holdout.clone().or_else(|| job.run.holdout.clone()) {
            let scale = a.scale.or(job.run.rating_scale);
            job.holdout = Some(read_holdout(&path, scale, &job.obs)?);
        }
    }
    run_job("complete", job)
}

fn cmd_rpca(a: RpcaArgs) -> Result<()> {
    let dense = a.dense;
    let job = prepare(ProblemKind::Rpca, &a.flags, a.input.as_deref(), |p, shape| {
        if dense {
            let m = read_dense_file(p)?;
            let (d1, d2) = (m.nrows(), m.ncols());
            if shape.is_some_and(|s| s != (d1, d2)) {
                return Err(Error::Shape("dense input shape differs from the configured shape".into()));
            }
            let rows = (0..d1 * d2).map(|k| k / d2).collect();
            let cols = (0..d1 * d2).map(|k| k % d2).collect();
            let b = DVector::from_iterator(d1 * d2, (0..d1 * d2).map(|k| m[(k / d2, k % d2)]));
            ObservationSet::rpca((d1, d2), rows, cols, b)
        } else {
            read_observations(p, ObservationKind::Identity, shape)
        }
    })?;
    run_job("rpca", job)
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let obs = read_observations(&a.input, a.kind, a.shape)?;
    let lr = match (&a.factors, a.rank) {
        (Some(dir), _) => output::read_factors(dir)?,
        (None, Some(rank)) => {
            // spectral estimate from the rescaled zero-filled observations
            let (d1, d2) = obs.shape();
            let y = obs.adjoint_l(&(obs.b() * ((d1 * d2) as f64 / obs.n() as f64)))?;
            let opts = LrssvdOptions { rank, seed: a.seed, ..Default::default() };
            lrssvd(&LowRankFactors::zeros(d1, d2), &y, &opts)?.factors
        }
        (None, None) => return Err(config_error("diagnose needs --factors or --rank")),
    };
    let omega: Vec<usize> = match &a.support {
        Some(path) => {
            let s = output::read_sparse_on_cells(path, &obs)?;
            (0..s.len()).filter(|&k| s[k] != 0.0).collect()
        }
        None => Vec::new(),
    };
    let opts = PowerOptions { seed: a.seed, ..Default::default() };
    let report = diagnose(&obs, &lr, &omega, a.tau_l, a.tau_s, &opts)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<bool> {
    let opts = SuiteOptions { seed: a.seed, seeds: a.seeds, row: a.row, tau_l: a.tau_l, ..Default::default() };
    let report = run_suite(a.suite, &opts)?;
    report.write_dir(&a.out)?;
    for p in &report.predicates {
        println!("{} {}: {} (need {}) {}", a.suite, p.name, p.value, p.threshold, if p.pass { "PASS" } else { "FAIL" });
    }
    println!("{} {} cells in {:.2}s", a.suite, report.cells.len(), report.seconds);
    Ok(report.passed())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let params =
        InstanceParams { d1: a.d1, d2: a.d2, r: a.r, p: a.p, alpha: a.alpha, noise_std: a.noise_std, ..Default::default() };
    if a.kind == ProblemKind::General {
        return Err(config_error("gen writes completion and rpca instances only"));
    }
    let inst = make_instance(a.kind, &params, a.seed)?;
    let truth = a.out.join("truth");
    std::fs::create_dir_all(&truth)?;
    let obs_name = if a.mtx { "obs.mtx" } else { "obs.csv" };
    write_observations(&a.out.join(obs_name), &inst.obs)?;
    output::write_factors(&truth, &inst.l_star)?;
    if a.kind == ProblemKind::Rpca {
        apgd_core::observe::io::write_triplets_file(&truth.join("sparse.csv"), &output::sparse_triplets(&inst.obs, &inst.s_star))?;
    }
    let mut cfg = serde_json::to_value(recipe(a.kind, &params))?;
    let solver = cfg.as_object_mut().expect("solver config is an object");
    if params.noise_std > 0.0 {
        solver.insert("noise_level".into(), json!(inst.noise_abs));
    }
    solver.insert("observations".into(), json!(obs_name));
    solver.insert("shape".into(), json!([a.d1, a.d2]));
    solver.insert("truth".into(), json!("truth"));
    output::write_json(&a.out.join("config.json"), &cfg)?;
    let info = json!({
        "kind": a.kind,
        "params": params,
        "seed": a.seed,
        "n": inst.obs.n(),
        "mu": inst.mu,
        "noise_abs": inst.noise_abs,
        "mean_abs": inst.mean_abs,
        "max_abs": inst.max_abs,
    });
    output::write_json(&a.out.join("instance.json"), &info)?;
    println!("{}", serde_json::to_string(&info)?);
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("APGD_NUM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool that is already built keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let result = match cli.cmd {
        Cmd::Complete(a) => cmd_complete(a).map(|_| true),
        Cmd::Rpca(a) => cmd_rpca(a).map(|_| true),
        Cmd::Diagnose(a) => cmd_diagnose(a).map(|_| true),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Gen(a) => cmd_gen(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
