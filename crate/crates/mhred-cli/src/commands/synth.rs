use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use mhred::data::{save_transcripts, synthesize_corpus, CorpusStyle};

use crate::manifest::ManifestBuilder;
use crate::overlay::{require_path, Overlay, ENV_OUT_DIR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StyleArg {
    /// Response determined by a keyword four turns before the target
    TextDriven,
    /// Response determined by the last shown image's features
    ImageDriven,
}

impl From<StyleArg> for CorpusStyle {
    fn from(style: StyleArg) -> Self {
        match style {
            StyleArg::TextDriven => CorpusStyle::TextDriven,
            StyleArg::ImageDriven => CorpusStyle::ImageDriven,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus style [default: text-driven]
    #[arg(long, value_enum)]
    pub style: Option<StyleArg>,
    /// Sessions to synthesize [default: 100]
    #[arg(long)]
    pub n_sessions: Option<usize>,
    /// Image feature width [default: 16]
    #[arg(long)]
    pub img_dim: Option<usize>,
    /// Generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for transcripts.jsonl and features.bin
    /// [env: MHRED_OUT_DIR]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedSynth {
    style: CorpusStyle,
    n_sessions: usize,
    img_dim: usize,
    seed: u64,
}

pub fn run(args: SynthArgs, overlay: &Overlay) -> Result<()> {
    let mut manifest = ManifestBuilder::new("synth");
    let section = "synth";
    let out_dir = require_path(
        args.out_dir,
        overlay.path(section, "out_dir")?,
        Some(ENV_OUT_DIR),
        "--out-dir",
    )?;
    let style: CorpusStyle = args
        .style
        .map(StyleArg::into)
        .or(overlay
            .string(section, "style")?
            .map(|s| parse_style(&s))
            .transpose()?)
        .unwrap_or(CorpusStyle::TextDriven);
    let resolved = ResolvedSynth {
        style,
        n_sessions: args
            .n_sessions
            .or(overlay.usize(section, "n_sessions")?)
            .unwrap_or(100),
        img_dim: args
            .img_dim
            .or(overlay.usize(section, "img_dim")?)
            .unwrap_or(16),
        seed: args.seed.or(overlay.u64(section, "seed")?).unwrap_or(0),
    };

    let (transcripts, store) = synthesize_corpus(
        resolved.seed,
        resolved.n_sessions,
        style,
        resolved.img_dim,
    )?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    save_transcripts(&out_dir.join("transcripts.jsonl"), &transcripts)?;
    store.save(&out_dir.join("features.bin"))?;
    log::info!(
        "synthesized {} sessions ({} image features)",
        transcripts.len(),
        store.len()
    );

    manifest
        .seed("corpus", resolved.seed)
        .output("transcripts.jsonl")
        .output("features.bin");
    manifest.write(&out_dir, &resolved)?;
    Ok(())
}

fn parse_style(s: &str) -> Result<CorpusStyle> {
    match s {
        "text_driven" | "text-driven" => Ok(CorpusStyle::TextDriven),
        "image_driven" | "image-driven" => Ok(CorpusStyle::ImageDriven),
        other => bail!("unknown corpus style {other:?}; use text-driven or image-driven"),
    }
}
