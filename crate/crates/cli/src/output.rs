use std::collections::HashMap;
use std::path::Path;

use apgd_core::observe::io::{
    read_dense_file, read_triplets_csv, read_vector_file, write_dense_file, write_vector_file,
};
use apgd_core::observe::ObservationSet;
use apgd_core::solver::{Solution, SolverConfig};
use apgd_core::spectral::LowRankFactors;
use apgd_core::{Error, Result};
use nalgebra::DVector;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn write_factors(dir: &Path, l: &LowRankFactors) -> Result<()> {
    write_dense_file(&dir.join("U.csv"), l.u())?;
    write_vector_file(&dir.join("S.csv"), l.s())?;
    write_dense_file(&dir.join("V.csv"), l.v())?;
    Ok(())
}

pub fn read_factors(dir: &Path) -> Result<LowRankFactors> {
    let u = read_dense_file(&dir.join("U.csv"))?;
    let s = read_vector_file(&dir.join("S.csv"))?;
    let v = read_dense_file(&dir.join("V.csv"))?;
    LowRankFactors::new(u, s, v)
}

/// Nonzeros of a vector living on the observed cells, as `(i, j, value)`.
pub fn sparse_triplets(obs: &ObservationSet, s: &DVector<f64>) -> Vec<(usize, usize, f64)> {
    (0..s.len()).filter(|&k| s[k] != 0.0).map(|k| (obs.rows()[k], obs.cols()[k], s[k])).collect()
}

/// Reads a triplet file of sparse entries and places them on the observed
/// cells. Entries at unobserved cells are an error.
pub fn read_sparse_on_cells(path: &Path, obs: &ObservationSet) -> Result<DVector<f64>> {
    let triplets = read_triplets_csv(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let index: HashMap<(usize, usize), usize> =
        obs.rows().iter().zip(obs.cols()).enumerate().map(|(k, (&i, &j))| ((i, j), k)).collect();
    let mut s = DVector::zeros(obs.d_s());
    for (i, j, v) in triplets {
        match index.get(&(i, j)) {
            Some(&k) => s[k] = v,
            None => return Err(Error::Config(format!("sparse entry ({i}, {j}) is not an observed cell"))),
        }
    }
    Ok(s)
}

/// SHA-256 of the solver config's JSON form.
pub fn config_hash(cfg: &SolverConfig) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

pub fn manifest(command: &str, obs: &ObservationSet, cfg: &SolverConfig, sol: &Solution, files: &[&str]) -> Result<Value> {
    let (lambda_l, lambda_s) = cfg.lambdas(obs)?;
    Ok(json!({
        "command": command,
        "shape": [obs.shape().0, obs.shape().1],
        "n": obs.n(),
        "d_s": obs.d_s(),
        "rank": sol.l.rank(),
        "nnz": sol.support().len(),
        "iterations": sol.iterations,
        "converged": sol.converged,
        "lambda_l": lambda_l,
        "lambda_s": lambda_s,
        "config": cfg,
        "config_hash": config_hash(cfg)?,
        "files": files,
    }))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
