//! Configuration resolution. Every tunable resolves as: command-line flag,
//! else config-file entry, else environment variable (paths only), else the
//! built-in default. The config file is TOML with one section per
//! subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub const ENV_TRANSCRIPTS: &str = "MHRED_TRANSCRIPTS";
pub const ENV_FEATURES: &str = "MHRED_FEATURES";
pub const ENV_OUT_DIR: &str = "MHRED_OUT_DIR";

#[derive(Debug, Default)]
pub struct Overlay {
    table: toml::Table,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let table = text
            .parse::<toml::Table>()
            .with_context(|| format!("parsing config file {}", path.display()))?;
        Ok(Self { table })
    }

    fn entry(&self, section: &str, key: &str) -> Option<&toml::Value> {
        self.table.get(section)?.as_table()?.get(key)
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(Some)
                .with_context(|| format!("config [{section}] {key} must be a number")),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(v) => {
                let i = v
                    .as_integer()
                    .with_context(|| format!("config [{section}] {key} must be an integer"))?;
                let u = usize::try_from(i)
                    .ok()
                    .with_context(|| format!("config [{section}] {key} must not be negative"))?;
                Ok(Some(u))
            }
        }
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(v) => {
                let i = v
                    .as_integer()
                    .with_context(|| format!("config [{section}] {key} must be an integer"))?;
                let u = u64::try_from(i)
                    .ok()
                    .with_context(|| format!("config [{section}] {key} must not be negative"))?;
                Ok(Some(u))
            }
        }
    }

    pub fn bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .with_context(|| format!("config [{section}] {key} must be a boolean")),
        }
    }

    pub fn string(&self, section: &str, key: &str) -> Result<Option<String>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .with_context(|| format!("config [{section}] {key} must be a string")),
        }
    }

    pub fn path(&self, section: &str, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(section, key)?.map(PathBuf::from))
    }
}

pub fn env_path(var: &str) -> Option<PathBuf> {
    std::env::var_os(var)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Resolves a required path setting: flag, config entry, environment
/// variable, in that order; there is no default.
pub fn require_path(
    flag: Option<PathBuf>,
    config: Option<PathBuf>,
    var: Option<&str>,
    what: &str,
) -> Result<PathBuf> {
    if let Some(p) = flag.or(config).or(var.and_then(env_path)) {
        return Ok(p);
    }
    match var {
        Some(var) => bail!("{what} is required: pass the flag or set {var}"),
        None => bail!("{what} is required"),
    }
}
