use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use mhred::data::{
    extract_examples, load_transcripts, split_sessions, DialogueTranscript, ExtractedExample,
    ExtractionMode, FeatureStore, Vocabulary,
};

use crate::dataset::{write_examples, write_json, CorpusStats, DatasetMeta, Split, SplitCounts};
use crate::manifest::ManifestBuilder;
use crate::overlay::{require_path, Overlay, ENV_FEATURES, ENV_OUT_DIR, ENV_TRANSCRIPTS};
use crate::ModeArg;

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Transcript JSONL file, one session per line [env: MHRED_TRANSCRIPTS]
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    /// Image feature store; omitted means zero features [env: MHRED_FEATURES]
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Context layout [default: aggregated]
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Context elements per example [default: 5]
    #[arg(long)]
    pub context_size: Option<usize>,
    /// Feature width when no feature store is given [default: 16]
    #[arg(long)]
    pub img_dim: Option<usize>,
    /// Image slots per turn [default: 5]
    #[arg(long)]
    pub max_images: Option<usize>,
    /// Minimum token count for the vocabulary [default: 1]
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Session split shuffle seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory [env: MHRED_OUT_DIR]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedPrepare {
    mode: ExtractionMode,
    context_size: usize,
    img_dim: usize,
    max_images: usize,
    min_count: u64,
    seed: u64,
}

fn extract_all(
    sessions: &[DialogueTranscript],
    context_size: usize,
    mode: ExtractionMode,
) -> Result<Vec<ExtractedExample>> {
    let mut examples = Vec::new();
    for session in sessions {
        examples.extend(extract_examples(session, context_size, mode)?);
    }
    Ok(examples)
}

pub fn run(args: PrepareArgs, overlay: &Overlay) -> Result<()> {
    let mut manifest = ManifestBuilder::new("prepare");
    let section = "prepare";
    let transcripts_path = require_path(
        args.transcripts,
        overlay.path(section, "transcripts")?,
        Some(ENV_TRANSCRIPTS),
        "--transcripts",
    )?;
    let features_path = args
        .features
        .or(overlay.path(section, "features")?)
        .or_else(|| crate::overlay::env_path(ENV_FEATURES));
    let out_dir = require_path(
        args.out_dir,
        overlay.path(section, "out_dir")?,
        Some(ENV_OUT_DIR),
        "--out-dir",
    )?;
    let mode: ExtractionMode = args
        .mode
        .map(ModeArg::into)
        .or(overlay
            .string(section, "mode")?
            .map(|s| parse_mode(&s))
            .transpose()?)
        .unwrap_or(ExtractionMode::Aggregated);
    let resolved = ResolvedPrepare {
        mode,
        context_size: args
            .context_size
            .or(overlay.usize(section, "context_size")?)
            .unwrap_or(5),
        img_dim: args
            .img_dim
            .or(overlay.usize(section, "img_dim")?)
            .unwrap_or(16),
        max_images: args
            .max_images
            .or(overlay.usize(section, "max_images")?)
            .unwrap_or(5),
        min_count: args
            .min_count
            .or(overlay.u64(section, "min_count")?)
            .unwrap_or(1),
        seed: args.seed.or(overlay.u64(section, "seed")?).unwrap_or(0),
    };

    let transcripts = load_transcripts(&transcripts_path)
        .with_context(|| format!("loading {}", transcripts_path.display()))?;
    if transcripts.is_empty() {
        bail!(
            "no sessions in {}; nothing to prepare",
            transcripts_path.display()
        );
    }
    let store = match &features_path {
        Some(path) => FeatureStore::load(path)
            .with_context(|| format!("loading features from {}", path.display()))?,
        None => FeatureStore::new(resolved.img_dim),
    };

    let stats = CorpusStats {
        sessions: transcripts.len(),
        pairs: 0,
        mean_turns_per_session: transcripts.iter().map(|t| t.turns.len()).sum::<usize>() as f64
            / transcripts.len() as f64,
    };

    let (train_sessions, valid_sessions, test_sessions) =
        split_sessions(&transcripts, resolved.seed);
    let train = extract_all(&train_sessions, resolved.context_size, mode)?;
    let valid = extract_all(&valid_sessions, resolved.context_size, mode)?;
    let test = extract_all(&test_sessions, resolved.context_size, mode)?;
    let stats = CorpusStats {
        pairs: train.len() + valid.len() + test.len(),
        ..stats
    };

    let sequences: Vec<Vec<String>> = train
        .iter()
        .flat_map(|e| {
            e.context
                .iter()
                .map(|t| t.tokens.clone())
                .chain([e.target_tokens.clone()])
        })
        .collect();
    let vocabulary = Vocabulary::build(sequences.iter(), resolved.min_count);
    log::info!(
        "prepared {} sessions into {}/{}/{} examples, vocabulary {}",
        stats.sessions,
        train.len(),
        valid.len(),
        test.len(),
        vocabulary.len()
    );

    let meta = DatasetMeta {
        mode,
        context_size: resolved.context_size,
        img_dim: store.img_dim(),
        max_images_per_turn: resolved.max_images,
        min_count: resolved.min_count,
        vocab_size: vocabulary.len(),
        sessions: SplitCounts {
            train: train_sessions.len(),
            valid: valid_sessions.len(),
            test: test_sessions.len(),
        },
        examples: SplitCounts {
            train: train.len(),
            valid: valid.len(),
            test: test.len(),
        },
    };

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_examples(&out_dir.join(Split::Train.file_name()), &train)?;
    write_examples(&out_dir.join(Split::Valid.file_name()), &valid)?;
    write_examples(&out_dir.join(Split::Test.file_name()), &test)?;
    vocabulary.save(&out_dir.join("vocab.tsv"))?;
    store.save(&out_dir.join("features.bin"))?;
    write_json(&out_dir.join("meta.json"), &meta)?;
    write_json(&out_dir.join("stats.json"), &stats)?;

    manifest
        .seed("split", resolved.seed)
        .input("transcripts", &transcripts_path);
    if let Some(path) = &features_path {
        manifest.input("features", path);
    }
    for name in [
        "train.jsonl",
        "valid.jsonl",
        "test.jsonl",
        "vocab.tsv",
        "features.bin",
        "meta.json",
        "stats.json",
    ] {
        manifest.output(name);
    }
    manifest.write(&out_dir, &resolved)?;
    Ok(())
}

pub fn parse_mode(s: &str) -> Result<ExtractionMode> {
    match s {
        "aggregated" => Ok(ExtractionMode::Aggregated),
        "unrolled" => Ok(ExtractionMode::Unrolled),
        other => bail!("unknown extraction mode {other:?}; use aggregated or unrolled"),
    }
}
