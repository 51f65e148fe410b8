use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pmn_core::config::ScenarioConfig;
use pmn_core::dan::ParamsFile;
use sha2::{Digest, Sha256};

use crate::args::Common;

/// Caps the global worker pool when `PMN_THREADS` is set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PMN_THREADS") {
        let n: usize = v.parse().with_context(|| format!("PMN_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("PMN_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// The scenario after command-line overrides.
pub fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(nmax) = common.nmax {
        cfg.nmax = nmax;
    }
    cfg.scenario().context("invalid scenario")?;
    Ok(cfg)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of a configuration.
pub fn config_fingerprint(cfg: &ScenarioConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

/// `"30"` or a sweep `"22:2:36"` (start, step, inclusive stop).
pub fn parse_pt_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| anyhow!("bad number `{s}` in --pt-dbm `{spec}`")))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [v] => Ok(vec![*v]),
        [start, step, stop] => {
            if !(*step > 0.0) || stop < start {
                bail!("--pt-dbm sweep needs a positive step and stop >= start, got `{spec}`");
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| start + i as f64 * step).collect())
        }
        _ => bail!("--pt-dbm takes a value or start:step:stop, got `{spec}`"),
    }
}

pub fn parse_list<T: std::str::FromStr>(spec: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("{e}")))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        bail!("empty list `{spec}`");
    }
    Ok(items)
}

/// Loads trained parameters, pointing at `pmn train` when they are absent.
pub fn load_params(path: Option<&Path>) -> Result<ParamsFile> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("params.json"));
    if !path.exists() {
        bail!(
            "trained DAN parameters not found at {}; run `pmn train --config <scenario.json> --out <dir>` first and pass --params <dir>/params.json",
            path.display()
        );
    }
    ParamsFile::load(&path).with_context(|| format!("reading trained parameters {}", path.display()))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating output directory {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_pt_sweep("30").unwrap(), vec![30.0]);
        assert_eq!(parse_pt_sweep("22:2:36").unwrap().len(), 8);
        assert_eq!(parse_pt_sweep("22:2:36").unwrap()[7], 36.0);
        assert!(parse_pt_sweep("22:0:36").is_err());
        assert!(parse_pt_sweep("a").is_err());
        assert!(parse_pt_sweep("1:2").is_err());
    }

    #[test]
    fn list_parsing() {
        let v: Vec<pmn_core::tracker::Selector> = parse_list("dan, es,nearest").unwrap();
        assert_eq!(v.len(), 3);
        assert!(parse_list::<pmn_core::tracker::Selector>("dan,bogus").is_err());
        assert!(parse_list::<pmn_core::tracker::Selector>("").is_err());
    }

    #[test]
    fn missing_params_names_train() {
        let err = load_params(Some(Path::new("/nonexistent/params.json"))).unwrap_err();
        assert!(err.to_string().contains("pmn train"));
    }
}
