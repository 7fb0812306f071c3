//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the long CLI flag names
//! without dashes; command-line flags are applied after the file and therefore win.

use std::path::{Path, PathBuf};

use crate::acquisition::AcquisitionMode;
use crate::error::{Error, Result};
use crate::runner::RunConfig;

/// Parses `key = value` lines into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    parse_pairs(&std::fs::read_to_string(path)?)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

/// Parses a comma-separated seed list such as `1,2,3`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num::<u64>("seeds", s))
        .collect()
}

/// Applies one setting to `cfg`.
pub fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "method" => cfg.method = value.parse()?,
        "objective" => cfg.objective = value.to_string(),
        "dim" => cfg.dim = num(key, value)?,
        "T" | "horizon" => cfg.horizon = num(key, value)?,
        "n" => cfg.n = Some(num(key, value)?),
        "sigma" => cfg.sigma = num(key, value)?,
        "seeds" => cfg.seeds = parse_seeds(value)?,
        "out" => cfg.out = Some(PathBuf::from(value)),
        "beta-scale" => cfg.beta_scale = num(key, value)?,
        "lambda-scale" => cfg.lambda_scale = num(key, value)?,
        "hidden" => cfg.hidden = num(key, value)?,
        "clamp-center" => cfg.clamp_center = flag(key, value)?,
        "diagnostics" => cfg.write_diagnostics = flag(key, value)?,
        "gd-iters" => cfg.phase1.gd_iters = num(key, value)?,
        "gd-step" => cfg.phase1.gd_step = num(key, value)?,
        "restarts" => cfg.phase1.restarts = num(key, value)?,
        "clamp-fit" => cfg.phase1.clamp_to_box = flag(key, value)?,
        "acquisition" => cfg.acquisition.mode = value.parse::<AcquisitionMode>()?,
        "outer-starts" => cfg.acquisition.outer_starts = num(key, value)?,
        "outer-iters" => cfg.acquisition.outer_iters = num(key, value)?,
        "inner-iters" => cfg.acquisition.inner_iters = num(key, value)?,
        "f-bound" => cfg.geometry.f_bound = num(key, value)?,
        "mu" => cfg.geometry.mu = num(key, value)?,
        "c-h" => cfg.geometry.c_h = num(key, value)?,
        "kappa" => cfg.gp.kappa = num(key, value)?,
        "xi" => cfg.gp.xi = num(key, value)?,
        "length-scale" => cfg.gp.length_scale = num(key, value)?,
        "candidates" => cfg.gp.candidate_count = num(key, value)?,
        other => return Err(Error::Config(format!("unknown setting {other:?}"))),
    }
    Ok(())
}

/// Builds a configuration from defaults, then `file_pairs`, then `overrides`.
pub fn build(file_pairs: &[(String, String)], overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in file_pairs.iter().chain(overrides) {
        apply(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
