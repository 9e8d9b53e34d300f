use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use mhred::eval::{bootstrap_compare, corpus_eval, BootstrapVerdict, METRICS};

use crate::commands::evaluate::paired_tokens;
use crate::dataset::write_json;
use crate::manifest::ManifestBuilder;
use crate::overlay::{require_path, Overlay, ENV_OUT_DIR};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// System A hypothesis file
    #[arg(long)]
    pub hyps_a: Option<PathBuf>,
    /// System B hypothesis file
    #[arg(long)]
    pub hyps_b: Option<PathBuf>,
    /// Shared reference file, line-aligned with both
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Bootstrap resamples [default: 1000]
    #[arg(long)]
    pub n_resamples: Option<usize>,
    /// Resampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for compare.json [env: MHRED_OUT_DIR]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedCompare {
    hyps_a: String,
    hyps_b: String,
    refs: String,
    n_resamples: usize,
    seed: u64,
}

pub fn run(args: CompareArgs, overlay: &Overlay) -> Result<()> {
    let mut manifest = ManifestBuilder::new("compare");
    let section = "compare";
    let hyps_a = require_path(
        args.hyps_a,
        overlay.path(section, "hyps_a")?,
        None,
        "--hyps-a",
    )?;
    let hyps_b = require_path(
        args.hyps_b,
        overlay.path(section, "hyps_b")?,
        None,
        "--hyps-b",
    )?;
    let refs = require_path(args.refs, overlay.path(section, "refs")?, None, "--refs")?;
    let out_dir = require_path(
        args.out_dir,
        overlay.path(section, "out_dir")?,
        Some(ENV_OUT_DIR),
        "--out-dir",
    )?;
    let n_resamples = args
        .n_resamples
        .or(overlay.usize(section, "n_resamples")?)
        .unwrap_or(1000);
    let seed = args.seed.or(overlay.u64(section, "seed")?).unwrap_or(0);

    let report_a = corpus_eval(&paired_tokens(&hyps_a, &refs)?)?;
    let report_b = corpus_eval(&paired_tokens(&hyps_b, &refs)?)?;
    let mut verdicts: BTreeMap<String, BootstrapVerdict> = BTreeMap::new();
    for metric in METRICS {
        let verdict = bootstrap_compare(
            &report_a.sentence_scores(metric),
            &report_b.sentence_scores(metric),
            n_resamples,
            seed,
        )?;
        println!(
            "{metric} A {:.4} vs B {:.4}: A wins {:.1}% of resamples, {}",
            verdict.score_a,
            verdict.score_b,
            verdict.win_fraction_a * 100.0,
            if verdict.significant {
                "significant at 95%"
            } else {
                "not significant"
            }
        );
        verdicts.insert(metric.to_string(), verdict);
    }

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&out_dir.join("compare.json"), &verdicts)?;

    manifest
        .seed("bootstrap", seed)
        .input("hyps_a", &hyps_a)
        .input("hyps_b", &hyps_b)
        .input("refs", &refs)
        .output("compare.json");
    manifest.write(
        &out_dir,
        &ResolvedCompare {
            hyps_a: hyps_a.display().to_string(),
            hyps_b: hyps_b.display().to_string(),
            refs: refs.display().to_string(),
            n_resamples,
            seed,
        },
    )?;
    Ok(())
}
