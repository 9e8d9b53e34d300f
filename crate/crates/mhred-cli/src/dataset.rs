//! On-disk dataset layout produced by `prepare` and consumed by `train` and
//! `generate`: `meta.json`, `stats.json`, `vocab.tsv`, `features.bin`, and
//! one JSONL example file per split.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mhred::data::{ExtractedExample, ExtractionMode, FeatureStore, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Valid => "valid.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mode: ExtractionMode,
    pub context_size: usize,
    pub img_dim: usize,
    pub max_images_per_turn: usize,
    pub min_count: u64,
    pub vocab_size: usize,
    pub sessions: SplitCounts,
    pub examples: SplitCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sessions: usize,
    pub pairs: usize,
    pub mean_turns_per_session: f64,
}

pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
    pub vocabulary: Vocabulary,
    pub store: FeatureStore,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(
            File::open(&meta_path)
                .with_context(|| format!("opening {}", meta_path.display()))?,
        ))
        .with_context(|| format!("parsing {}", meta_path.display()))?;
        let vocabulary = Vocabulary::load(&dir.join("vocab.tsv"))
            .with_context(|| format!("loading vocabulary from {}", dir.display()))?;
        let store = FeatureStore::load(&dir.join("features.bin"))
            .with_context(|| format!("loading features from {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            vocabulary,
            store,
        })
    }

    pub fn examples(&self, split: Split) -> Result<Vec<ExtractedExample>> {
        read_examples(&self.dir.join(split.file_name()))
    }
}

pub fn write_examples(path: &Path, examples: &[ExtractedExample]) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for example in examples {
        serde_json::to_writer(&mut w, example)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<ExtractedExample>> {
    let reader = BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: ExtractedExample = serde_json::from_str(&line)
            .with_context(|| format!("parsing {} line {}", path.display(), i + 1))?;
        examples.push(example);
    }
    Ok(examples)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
