use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use mhred::data::tokenize;
use mhred::eval::{corpus_eval, EvalReport, METRICS};

use crate::dataset::write_json;
use crate::manifest::ManifestBuilder;
use crate::overlay::{require_path, Overlay, ENV_OUT_DIR};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Hypothesis file, one response per line
    #[arg(long)]
    pub hyps: Option<PathBuf>,
    /// Reference file, line-aligned with the hypotheses
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Output directory for report.json [env: MHRED_OUT_DIR]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedEvaluate {
    hyps: String,
    refs: String,
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Tokenizes aligned hypothesis and reference files with the pipeline
/// tokenizer, erroring when line counts differ.
pub fn paired_tokens(
    hyps_path: &Path,
    refs_path: &Path,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let hyps = read_lines(hyps_path)?;
    let refs = read_lines(refs_path)?;
    if hyps.len() != refs.len() {
        bail!(
            "{} has {} lines but {} has {}; the files must be line-aligned",
            hyps_path.display(),
            hyps.len(),
            refs_path.display(),
            refs.len()
        );
    }
    Ok(hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| (tokenize(h), tokenize(r)))
        .collect())
}

pub fn print_report(report: &EvalReport) {
    for metric in METRICS {
        println!("{metric} {:.4}", report.mean(metric));
    }
}

pub fn run(args: EvaluateArgs, overlay: &Overlay) -> Result<()> {
    let mut manifest = ManifestBuilder::new("evaluate");
    let section = "evaluate";
    let hyps_path = require_path(args.hyps, overlay.path(section, "hyps")?, None, "--hyps")?;
    let refs_path = require_path(args.refs, overlay.path(section, "refs")?, None, "--refs")?;
    let out_dir = require_path(
        args.out_dir,
        overlay.path(section, "out_dir")?,
        Some(ENV_OUT_DIR),
        "--out-dir",
    )?;

    let pairs = paired_tokens(&hyps_path, &refs_path)?;
    let report = corpus_eval(&pairs)?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&out_dir.join("report.json"), &report)?;
    print_report(&report);

    manifest
        .input("hyps", &hyps_path)
        .input("refs", &refs_path)
        .output("report.json");
    manifest.write(
        &out_dir,
        &ResolvedEvaluate {
            hyps: hyps_path.display().to_string(),
            refs: refs_path.display().to_string(),
        },
    )?;
    Ok(())
}
