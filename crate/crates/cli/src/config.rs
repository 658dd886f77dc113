use std::path::{Path, PathBuf};

use apgd_core::solver::SolverConfig;
use apgd_core::{Error, Result};
use serde_json::{Map, Value};

/// Keys of a run config that are not solver settings.
const RUN_KEYS: [&str; 6] = ["observations", "shape", "holdout", "rating_scale", "truth", "out"];

/// Solver settings plus the files a run reads and writes. Relative paths
/// are resolved against the config file's directory.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub observations: Option<PathBuf>,
    pub shape: Option<(usize, usize)>,
    pub holdout: Option<PathBuf>,
    pub rating_scale: Option<(f64, f64)>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Overlays the JSON object in `text` on `base`. Unknown keys are rejected.
pub fn parse(text: &str, base: SolverConfig, dir: &Path) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(mut obj) = value else {
        return Err(bad("run config must be a JSON object"));
    };
    let mut run = RunConfig::default();
    let path = |v: Value, key: &str| -> Result<PathBuf> {
        match v {
            Value::String(s) => Ok(dir.join(s)),
            _ => Err(bad(format!("`{key}` must be a path string"))),
        }
    };
    for key in RUN_KEYS {
        let Some(v) = obj.remove(key) else { continue };
        match key {
            "observations" => run.observations = Some(path(v, key)?),
            "holdout" => run.holdout = Some(path(v, key)?),
            "truth" => run.truth = Some(path(v, key)?),
            "out" => run.out = Some(path(v, key)?),
            "shape" => run.shape = Some(serde_json::from_value(v).map_err(|e| bad(format!("`shape`: {e}")))?),
            "rating_scale" => {
                run.rating_scale = Some(serde_json::from_value(v).map_err(|e| bad(format!("`rating_scale`: {e}")))?)
            }
            _ => unreachable!(),
        }
    }
    run.solver = overlay(base, obj)?;
    Ok(run)
}

fn overlay(base: SolverConfig, keys: Map<String, Value>) -> Result<SolverConfig> {
    let Value::Object(mut merged) = serde_json::to_value(&base)? else {
        unreachable!("solver config serializes to an object")
    };
    merged.extend(keys);
    serde_json::from_value(Value::Object(merged)).map_err(|e| bad(format!("run config: {e}")))
}

pub fn load(path: &Path, base: SolverConfig) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse(&text, base, path.parent().unwrap_or(Path::new(".")))
}
