use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use mhred::data::{encode_examples, make_batches};
use mhred::model::{load_checkpoint, Batch, DecodeMode, Model};
use mhred::tensor::Graph;

use crate::dataset::{Dataset, Split};
use crate::manifest::ManifestBuilder;
use crate::overlay::{require_path, Overlay, ENV_OUT_DIR};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Prepared dataset directory
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Split to generate for [default: test]
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Beam width; 1 is greedy [default: 1]
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Override the checkpoint's decode-length cap
    #[arg(long)]
    pub max_decode_len: Option<usize>,
    /// Examples decoded per forward pass (greedy only) [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output directory for hyps.txt and refs.txt [env: MHRED_OUT_DIR]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedGenerate {
    checkpoint: String,
    dataset: String,
    split: String,
    beam_width: usize,
    max_decode_len: usize,
    batch_size: usize,
}

pub fn run(args: GenerateArgs, overlay: &Overlay) -> Result<()> {
    let mut manifest = ManifestBuilder::new("generate");
    let section = "generate";
    let checkpoint_path = require_path(
        args.checkpoint,
        overlay.path(section, "checkpoint")?,
        None,
        "--checkpoint",
    )?;
    let dataset_dir = require_path(
        args.dataset,
        overlay.path(section, "dataset")?,
        None,
        "--dataset",
    )?;
    let out_dir = require_path(
        args.out_dir,
        overlay.path(section, "out_dir")?,
        Some(ENV_OUT_DIR),
        "--out-dir",
    )?;
    let split = args
        .split
        .or(overlay
            .string(section, "split")?
            .map(|s| parse_split(&s))
            .transpose()?)
        .unwrap_or(Split::Test);
    let beam_width = args
        .beam_width
        .or(overlay.usize(section, "beam_width")?)
        .unwrap_or(1);
    if beam_width == 0 {
        bail!("--beam-width must be at least 1");
    }
    let batch_size = args
        .batch_size
        .or(overlay.usize(section, "batch_size")?)
        .unwrap_or(32);

    let dataset = Dataset::open(&dataset_dir)?;
    let mut model = load_checkpoint(&checkpoint_path)
        .with_context(|| format!("loading {}", checkpoint_path.display()))?;
    if model.config.vocab_size != dataset.vocabulary.len() {
        bail!(
            "checkpoint vocabulary size {} does not match the dataset's {}",
            model.config.vocab_size,
            dataset.vocabulary.len()
        );
    }
    if model.config.img_dim != dataset.meta.img_dim {
        bail!(
            "checkpoint feature width {} does not match the dataset's {}",
            model.config.img_dim,
            dataset.meta.img_dim
        );
    }
    if model.config.context_size != dataset.meta.context_size {
        bail!(
            "checkpoint context size {} does not match the dataset's {}",
            model.config.context_size,
            dataset.meta.context_size
        );
    }
    if let Some(cap) = args
        .max_decode_len
        .or(overlay.usize(section, "max_decode_len")?)
    {
        model.config.max_decode_len = cap;
        model
            .config
            .validate()
            .map_err(|e| anyhow::anyhow!("decode-length override rejected: {e}"))?;
    }

    let examples = dataset.examples(split)?;
    let encoded = encode_examples(
        &examples,
        &dataset.vocabulary,
        &dataset.store,
        dataset.meta.max_images_per_turn,
    );
    let mode = if beam_width > 1 {
        DecodeMode::Beam { width: beam_width }
    } else {
        DecodeMode::Greedy
    };
    let per_pass = if beam_width > 1 { 1 } else { batch_size };
    let batches = make_batches(&encoded, per_pass)?;

    let mut hypotheses: Vec<String> = Vec::with_capacity(examples.len());
    for batch in &batches {
        for ids in decode_batch(&model, batch, mode)? {
            let tokens = dataset
                .vocabulary
                .decode(&ids)
                .map_err(|e| anyhow::anyhow!("decoding generated ids: {e}"))?;
            hypotheses.push(tokens.join(" "));
        }
    }

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_lines(&out_dir.join("hyps.txt"), &hypotheses)?;
    let references: Vec<String> = examples.iter().map(|e| e.target_tokens.join(" ")).collect();
    write_lines(&out_dir.join("refs.txt"), &references)?;
    log::info!(
        "generated {} responses for the {:?} split",
        hypotheses.len(),
        split
    );

    manifest
        .input("checkpoint", &checkpoint_path)
        .input("dataset", &dataset_dir)
        .output("hyps.txt")
        .output("refs.txt");
    manifest.write(
        &out_dir,
        &ResolvedGenerate {
            checkpoint: checkpoint_path.display().to_string(),
            dataset: dataset_dir.display().to_string(),
            split: format!("{split:?}").to_lowercase(),
            beam_width,
            max_decode_len: model.config.max_decode_len,
            batch_size: per_pass,
        },
    )?;
    Ok(())
}

fn decode_batch(model: &Model, batch: &Batch, mode: DecodeMode) -> Result<Vec<Vec<usize>>> {
    let mut g = Graph::new();
    let encoded = model.encode_context(&mut g, batch)?;
    Ok(model.generate(&mut g, &encoded, mode)?)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {other:?}; use train, valid, or test"),
    }
}

pub fn write_lines(path: &std::path::Path, lines: &[String]) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for line in lines {
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
