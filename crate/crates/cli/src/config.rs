//! Run configuration file: TOML with `[run]`, `[paths]` and `[bands]`
//! sections. Command-line flags win over file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bletrack_core::sim::{BandThresholds, DEFAULT_SEED};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub paths: PathSection,
    pub bands: Option<BandThresholds>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub preset: Option<String>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub road: Option<PathBuf>,
    pub rssi: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub store: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // inputs must exist; the store is created on first ingest
        for p in [&cfg.paths.road, &cfg.paths.rssi, &cfg.paths.registry].into_iter().flatten() {
            if !p.exists() {
                bail!("config {} names missing file {}", path.display(), p.display());
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.run.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn preset(&self, flag: Option<String>) -> String {
        flag.or_else(|| self.run.preset.clone()).unwrap_or_else(|| bletrack_core::preset::DEFAULT_PRESET.to_string())
    }

    pub fn bands(&self) -> BandThresholds {
        self.bands.unwrap_or_default()
    }

    /// Relative output paths land in `out_dir` when one is configured.
    pub fn output(&self, path: &Path) -> PathBuf {
        match &self.run.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

pub fn pick(flag: Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| file.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} given (flag or [paths] entry)"),
    }
}
