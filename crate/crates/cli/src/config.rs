//! Flat TOML run configuration. Keys mirror the long command-line flags
//! (with underscores); flags given on the command line take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // simulate
    pub seeds: Option<usize>,
    pub first_seed: Option<u64>,
    pub size: Option<usize>,
    pub out: Option<PathBuf>,
    pub t_range: Option<[f64; 2]>,
    pub gamma: Option<f64>,
    pub bits: Option<u32>,
    // train
    pub role: Option<String>,
    pub data: Option<PathBuf>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub ckpt: Option<PathBuf>,
    pub ckpts: Option<PathBuf>,
    // reconstruct
    pub ldr: Option<PathBuf>,
    pub inv_shading: Option<PathBuf>,
    pub albedo: Option<PathBuf>,
    // evaluate
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }
}

/// Command-line value, else config value, else a usage error naming the flag.
pub fn required<T>(cli: Option<T>, cfg: Option<T>, flag: &str) -> Result<T, String> {
    cli.or(cfg).ok_or_else(|| format!("missing required option --{flag}"))
}

pub fn or_default<T>(cli: Option<T>, cfg: Option<T>, default: T) -> T {
    cli.or(cfg).unwrap_or(default)
}
