use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use mhred::data::{encode_examples, make_batches};
use mhred::model::{save_checkpoint, Model, ModelConfig};
use mhred::train::{fit, write_history, TrainConfig};

use crate::dataset::{Dataset, Split};
use crate::manifest::ManifestBuilder;
use crate::overlay::{require_path, Overlay, ENV_OUT_DIR};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset directory
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory for checkpoint and history [env: MHRED_OUT_DIR]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Feed image features into the context (the M in M-HRED)
    #[arg(long, action = clap::ArgAction::SetTrue)]
    pub multimodal: Option<bool>,
    /// Decode with attention over encoder states (the -attn suffix)
    #[arg(long, action = clap::ArgAction::SetTrue)]
    pub attention: Option<bool>,
    /// Context size; must match the dataset [default: the dataset's]
    #[arg(long)]
    pub context_size: Option<usize>,
    /// Embedding width [default: 64]
    #[arg(long)]
    pub emb_dim: Option<usize>,
    /// Hidden width [default: 64]
    #[arg(long)]
    pub hid_dim: Option<usize>,
    /// Use a single forward encoder instead of the bidirectional one
    #[arg(long, action = clap::ArgAction::SetTrue)]
    pub unidirectional: Option<bool>,
    /// Give the decoder its own embedding table
    #[arg(long, action = clap::ArgAction::SetTrue)]
    pub untied: Option<bool>,
    /// Attend only over the last context turn
    #[arg(long, action = clap::ArgAction::SetTrue)]
    pub attend_last_turn_only: Option<bool>,
    /// Decode-length cap, end token included [default: 30]
    #[arg(long)]
    pub max_decode_len: Option<usize>,
    /// Learning rate [default: 0.0004]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Global gradient-norm clip [default: 5]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Examples per optimizer step [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch cap [default: 50]
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping [default: 3]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seed for initialization and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ResolvedTrain {
    dataset: String,
    model: ModelConfig,
    train: TrainConfig,
}

pub fn run(args: TrainArgs, overlay: &Overlay) -> Result<()> {
    let mut manifest = ManifestBuilder::new("train");
    let section = "train";
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
    let dataset = Dataset::open(&dataset_dir)?;

    let context_size = args
        .context_size
        .or(overlay.usize(section, "context_size")?)
        .unwrap_or(dataset.meta.context_size);
    if context_size != dataset.meta.context_size {
        bail!(
            "--context-size {} does not match the dataset's context size {}; \
             prepare the dataset with the context size you want to train at",
            context_size,
            dataset.meta.context_size
        );
    }
    let flag = |v: Option<bool>, key: &str| -> Result<bool> {
        Ok(v.filter(|&b| b)
            .or(overlay.bool(section, key)?)
            .unwrap_or(false))
    };
    let model_config = ModelConfig {
        vocab_size: dataset.vocabulary.len(),
        emb_dim: args
            .emb_dim
            .or(overlay.usize(section, "emb_dim")?)
            .unwrap_or(64),
        hid_dim: args
            .hid_dim
            .or(overlay.usize(section, "hid_dim")?)
            .unwrap_or(64),
        img_dim: dataset.meta.img_dim,
        max_images_per_turn: dataset.meta.max_images_per_turn,
        context_size,
        multimodal: flag(args.multimodal, "multimodal")?,
        use_attention: flag(args.attention, "attention")?,
        bidirectional_encoder: !flag(args.unidirectional, "unidirectional")?,
        tied_embeddings: !flag(args.untied, "untied")?,
        max_decode_len: args
            .max_decode_len
            .or(overlay.usize(section, "max_decode_len")?)
            .unwrap_or(30),
        attend_last_turn_only: flag(args.attend_last_turn_only, "attend_last_turn_only")?,
    };
    let train_config = TrainConfig {
        learning_rate: args.lr.or(overlay.f64(section, "lr")?).unwrap_or(0.0004),
        clip_norm: args
            .clip_norm
            .or(overlay.f64(section, "clip_norm")?)
            .unwrap_or(5.0),
        batch_size: args
            .batch_size
            .or(overlay.usize(section, "batch_size")?)
            .unwrap_or(32),
        max_epochs: args
            .max_epochs
            .or(overlay.usize(section, "max_epochs")?)
            .unwrap_or(50),
        patience: args
            .patience
            .or(overlay.usize(section, "patience")?)
            .unwrap_or(3),
        seed: args.seed.or(overlay.u64(section, "seed")?).unwrap_or(0),
        ..TrainConfig::default()
    };

    let load_units = |split: Split| -> Result<Vec<mhred::model::Batch>> {
        let examples = dataset.examples(split)?;
        let encoded = encode_examples(
            &examples,
            &dataset.vocabulary,
            &dataset.store,
            dataset.meta.max_images_per_turn,
        );
        Ok(make_batches(&encoded, 1)?)
    };
    let train_units = load_units(Split::Train)?;
    let valid_units = load_units(Split::Valid)?;
    if train_units.is_empty() {
        bail!("the dataset's train split is empty");
    }
    if valid_units.is_empty() {
        bail!(
            "the dataset's valid split is empty; prepare needs at least ten \
             sessions to populate it"
        );
    }

    let model = Model::new(model_config.clone(), train_config.seed)
        .map_err(|e| anyhow::anyhow!("model configuration rejected: {e}"))?;
    log::info!(
        "training {} parameters on {} examples (validating on {})",
        model.param_count(),
        train_units.len(),
        valid_units.len()
    );
    let outcome = fit(&model, &train_units, &valid_units, &train_config)?;
    for record in &outcome.history {
        log::info!(
            "epoch {}: train loss {:.4}, valid loss {:.4}, clipped {:.0}%",
            record.epoch,
            record.train_loss,
            record.valid_loss,
            record.clipped_fraction * 100.0
        );
    }
    log::info!(
        "best epoch {} with valid loss {:.4}",
        outcome.best_epoch,
        outcome.best_valid_loss
    );

    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    save_checkpoint(&model, &out_dir.join("model.ckpt"))?;
    write_history(&out_dir.join("history.jsonl"), &outcome.history)?;

    manifest
        .seed("run", train_config.seed)
        .input("dataset", &dataset_dir)
        .output("model.ckpt")
        .output("history.jsonl");
    manifest.write(
        &out_dir,
        &ResolvedTrain {
            dataset: dataset_dir.display().to_string(),
            model: model_config,
            train: train_config,
        },
    )?;
    Ok(())
}
