//! Run manifests. Every command writes exactly one `manifest.json` next to
//! its outputs recording the fully resolved configuration, seeds, paths, and
//! wall-clock time. Data outputs are bitwise reproducible from the recorded
//! configuration and seeds; the timing field is the one part of a manifest
//! that varies between identical runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub artifact_version: &'static str,
    pub seeds: BTreeMap<&'static str, u64>,
    pub inputs: BTreeMap<&'static str, String>,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
    pub timings: Timings,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub total_secs: f64,
}

pub struct ManifestBuilder {
    command: &'static str,
    started: Instant,
    seeds: BTreeMap<&'static str, u64>,
    inputs: BTreeMap<&'static str, String>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &'static str, value: u64) -> &mut Self {
        self.seeds.insert(name, value);
        self
    }

    pub fn input(&mut self, name: &'static str, path: &Path) -> &mut Self {
        self.inputs.insert(name, path.display().to_string());
        self
    }

    pub fn output(&mut self, name: &str) -> &mut Self {
        self.outputs.push(name.to_string());
        self
    }

    /// Serializes the resolved configuration and writes `manifest.json`
    /// into `dir`.
    pub fn write<C: Serialize>(self, dir: &Path, config: &C) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            artifact_version: env!("CARGO_PKG_VERSION"),
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            config: serde_json::to_value(config).context("serializing resolved config")?,
            timings: Timings {
                total_secs: self.started.elapsed().as_secs_f64(),
            },
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
