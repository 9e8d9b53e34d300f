//! Transcript ingestion, example extraction, and corpus synthesis.
//!
//! Raw dialogues arrive as line-delimited JSON sessions. Extraction turns
//! each agent utterance with text into one training example whose context is
//! the preceding turns, in either of two layouts: aggregated keeps every
//! turn intact with all its images, unrolled gives each image its own
//! context element with empty text.

mod features;
mod synth;
mod vocab;

pub use features::FeatureStore;
pub use synth::{synthesize_corpus, CorpusStyle};
pub use vocab::Vocabulary;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, TurnInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub session_id: String,
    pub turns: Vec<Turn>,
}

impl DialogueTranscript {
    pub fn validate(&self) -> Result<()> {
        if self.session_id.is_empty() {
            return Err(Error::Parse {
                session: "<unnamed>".into(),
                turn: 0,
                msg: "session_id is empty".into(),
            });
        }
        if self.turns.is_empty() {
            return Err(Error::Parse {
                session: self.session_id.clone(),
                turn: 0,
                msg: "session has no turns".into(),
            });
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.image_ids.iter().any(String::is_empty) {
                return Err(Error::Parse {
                    session: self.session_id.clone(),
                    turn: i,
                    msg: "empty image id".into(),
                });
            }
        }
        Ok(())
    }
}

/// Reads one JSON session per line, validating each.
pub fn load_transcripts(path: &Path) -> Result<Vec<DialogueTranscript>> {
    let reader = BufReader::new(File::open(path)?);
    let mut transcripts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: DialogueTranscript = serde_json::from_str(&line).map_err(|e| Error::Parse {
            session: format!("line {}", i + 1),
            turn: 0,
            msg: e.to_string(),
        })?;
        t.validate()?;
        transcripts.push(t);
    }
    Ok(transcripts)
}

pub fn save_transcripts(path: &Path, transcripts: &[DialogueTranscript]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in transcripts {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Lowercases and splits text into alphanumeric runs; every other
/// non-whitespace character becomes its own token, so "don't" gives
/// ["don", "'", "t"].
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            run.push(c);
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionMode {
    Aggregated,
    Unrolled,
}

/// One context element: tokenized text plus the image ids it carries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub tokens: Vec<String>,
    pub image_ids: Vec<String>,
}

/// A context-response pair in token-string form, before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedExample {
    pub session_id: String,
    /// Index of the agent turn this example's target came from.
    pub target_turn: usize,
    /// Exactly `context_size` elements, left-padded with empty turns.
    pub context: Vec<ContextTurn>,
    pub target_tokens: Vec<String>,
}

/// Produces one example per agent turn with nonempty tokenized text. The
/// context covers only earlier turns: aggregated mode keeps the last
/// `context_size` turns whole, unrolled mode rebuilds the history as one
/// element per image (empty text) and keeps the most recent `context_size`.
pub fn extract_examples(
    transcript: &DialogueTranscript,
    context_size: usize,
    mode: ExtractionMode,
) -> Result<Vec<ExtractedExample>> {
    if context_size == 0 {
        return Err(Error::Contract("context_size must be at least 1".into()));
    }
    transcript.validate()?;
    let mut examples = Vec::new();
    for (idx, turn) in transcript.turns.iter().enumerate() {
        if turn.speaker != Speaker::Agent {
            continue;
        }
        let target_tokens = tokenize(&turn.text);
        if target_tokens.is_empty() {
            continue;
        }
        let history = &transcript.turns[..idx];
        let elements: Vec<ContextTurn> = match mode {
            ExtractionMode::Aggregated => history
                .iter()
                .map(|t| ContextTurn {
                    tokens: tokenize(&t.text),
                    image_ids: t.image_ids.clone(),
                })
                .collect(),
            ExtractionMode::Unrolled => history
                .iter()
                .flat_map(|t| t.image_ids.iter())
                .map(|id| ContextTurn {
                    tokens: Vec::new(),
                    image_ids: vec![id.clone()],
                })
                .collect(),
        };
        let keep = elements.len().min(context_size);
        let mut context = vec![ContextTurn::default(); context_size - keep];
        context.extend_from_slice(&elements[elements.len() - keep..]);
        examples.push(ExtractedExample {
            session_id: transcript.session_id.clone(),
            target_turn: idx,
            context,
            target_tokens,
        });
    }
    Ok(examples)
}

/// Renders an example as a three-line card (text, images, target) for
/// comparing context layouts side by side. Aggregated contexts show each
/// turn's images as a bracketed group of `slots` entries with "0" filling
/// empty slots; unrolled contexts show the bare image id per element.
pub fn render_example(example: &ExtractedExample, mode: ExtractionMode, slots: usize) -> String {
    let texts: Vec<String> = example
        .context
        .iter()
        .map(|t| t.tokens.join(" "))
        .collect();
    let images: Vec<String> = example
        .context
        .iter()
        .map(|t| match mode {
            ExtractionMode::Aggregated => {
                let entries: Vec<&str> = (0..slots)
                    .map(|j| t.image_ids.get(j).map(String::as_str).unwrap_or("0"))
                    .collect();
                format!("[{}]", entries.join(", "))
            }
            ExtractionMode::Unrolled => t
                .image_ids
                .first()
                .cloned()
                .unwrap_or_else(|| "0".to_string()),
        })
        .collect();
    format!(
        "text: {}\nimages: {}\ntarget: {}\n",
        texts.join(" | "),
        images.join(" | "),
        example.target_tokens.join(" ")
    )
}

/// An example after vocabulary and feature lookup, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub context: Vec<EncodedTurn>,
    pub target_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTurn {
    pub token_ids: Vec<usize>,
    pub image_rows: Vec<Vec<f64>>,
}

/// Looks up tokens (unknowns become UNK) and image features (missing ids
/// resolve to zero vectors with a warning), keeping at most `max_images`
/// rows per turn.
pub fn encode_examples(
    examples: &[ExtractedExample],
    vocabulary: &Vocabulary,
    store: &FeatureStore,
    max_images: usize,
) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|ex| EncodedExample {
            context: ex
                .context
                .iter()
                .map(|t| EncodedTurn {
                    token_ids: vocabulary.encode(&t.tokens),
                    image_rows: t
                        .image_ids
                        .iter()
                        .take(max_images)
                        .map(|id| store.lookup(id))
                        .collect(),
                })
                .collect(),
            target_ids: vocabulary.encode(&ex.target_tokens),
        })
        .collect()
}

/// Groups encoded examples into model batches of at most `batch_size`,
/// preserving order. All examples must share one context length.
pub fn make_batches(examples: &[EncodedExample], batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch_size must be at least 1".into()));
    }
    let Some(first) = examples.first() else {
        return Ok(Vec::new());
    };
    let context_size = first.context.len();
    if let Some(bad) = examples.iter().find(|e| e.context.len() != context_size) {
        return Err(Error::Contract(format!(
            "examples mix context lengths {} and {}",
            context_size,
            bad.context.len()
        )));
    }
    let mut batches = Vec::new();
    for chunk in examples.chunks(batch_size) {
        let mut turns = vec![TurnInput::default(); context_size];
        let mut targets = Vec::with_capacity(chunk.len());
        for ex in chunk {
            for (n, turn) in ex.context.iter().enumerate() {
                turns[n].tokens.push(turn.token_ids.clone());
                turns[n].images.push(turn.image_rows.clone());
            }
            targets.push(ex.target_ids.clone());
        }
        batches.push(Batch { turns, targets });
    }
    Ok(batches)
}

/// Splits sessions into train/valid/test parts by seeded shuffle. Valid and
/// test each receive a tenth of the sessions (rounded down, so corpora under
/// ten sessions put everything in train) and train keeps the rest.
pub fn split_sessions(
    transcripts: &[DialogueTranscript],
    seed: u64,
) -> (
    Vec<DialogueTranscript>,
    Vec<DialogueTranscript>,
    Vec<DialogueTranscript>,
) {
    let mut order: Vec<usize> = (0..transcripts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = transcripts.len() / 10;
    let pick = |range: std::ops::Range<usize>| {
        let mut part: Vec<DialogueTranscript> =
            range.map(|i| transcripts[order[i]].clone()).collect();
        part.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        part
    };
    let test = pick(0..tenth);
    let valid = pick(tenth..2 * tenth);
    let train = pick(2 * tenth..transcripts.len());
    (train, valid, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn catalogue_session() -> DialogueTranscript {
        DialogueTranscript {
            session_id: "catalogue".into(),
            turns: vec![
                Turn {
                    speaker: Speaker::Agent,
                    text: "Sorry i don't think i have any 100 % acrylic but i can show \
                           you in knit"
                        .into(),
                    image_ids: (1..=5).map(|i| format!("Img {i}")).collect(),
                },
                Turn {
                    speaker: Speaker::User,
                    text: "Show me something similar to the 4th image but with the material \
                           different"
                        .into(),
                    image_ids: vec![],
                },
                Turn {
                    speaker: Speaker::Agent,
                    text: "The similar looking ones are".into(),
                    image_ids: vec![],
                },
            ],
        }
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Don't STOP, now!"),
            vec!["don", "'", "t", "stop", ",", "now", "!"]
        );
        assert_eq!(tokenize("100 % acrylic"), vec!["100", "%", "acrylic"]);
        assert_eq!(tokenize("the 4th image"), vec!["the", "4th", "image"]);
        assert_eq!(tokenize("   "), Vec::<String>::new());
    }

    #[test]
    fn aggregated_context_keeps_turns_whole_with_their_images() {
        let session = catalogue_session();
        let examples = extract_examples(&session, 2, ExtractionMode::Aggregated).unwrap();
        // The first agent turn has no history; only the final one yields a
        // two-turn context.
        assert_eq!(examples.len(), 2);
        let ex = &examples[1];
        assert_eq!(ex.target_turn, 2);
        assert_eq!(ex.context.len(), 2);
        assert_eq!(ex.context[0].image_ids.len(), 5);
        assert!(ex.context[1].image_ids.is_empty());
        assert_eq!(ex.context[1].tokens[0], "show");
        assert_eq!(
            ex.target_tokens,
            vec!["the", "similar", "looking", "ones", "are"]
        );

        let rendered = render_example(ex, ExtractionMode::Aggregated, 5);
        assert!(rendered.contains("images: [Img 1, Img 2, Img 3, Img 4, Img 5] | [0, 0, 0, 0, 0]"));
    }

    #[test]
    fn unrolled_context_gives_each_image_its_own_element() {
        let session = catalogue_session();
        let examples = extract_examples(&session, 2, ExtractionMode::Unrolled).unwrap();
        assert_eq!(examples.len(), 2);
        let ex = &examples[1];
        assert_eq!(ex.context.len(), 2);
        for turn in &ex.context {
            assert!(turn.tokens.is_empty());
            assert_eq!(turn.image_ids.len(), 1);
        }
        assert_eq!(ex.context[0].image_ids[0], "Img 4");
        assert_eq!(ex.context[1].image_ids[0], "Img 5");

        let rendered = render_example(ex, ExtractionMode::Unrolled, 5);
        assert!(rendered.contains("images: Img 4 | Img 5"));
    }

    #[test]
    fn both_modes_agree_on_example_count_and_targets() {
        let session = catalogue_session();
        for cxt in 1..=4 {
            let agg = extract_examples(&session, cxt, ExtractionMode::Aggregated).unwrap();
            let unr = extract_examples(&session, cxt, ExtractionMode::Unrolled).unwrap();
            assert_eq!(agg.len(), unr.len());
            for (a, u) in agg.iter().zip(&unr) {
                assert_eq!(a.target_tokens, u.target_tokens);
                assert_eq!(a.target_turn, u.target_turn);
            }
        }
    }

    #[test]
    fn short_history_left_pads_with_empty_turns() {
        let t = DialogueTranscript {
            session_id: "s".into(),
            turns: vec![
                Turn {
                    speaker: Speaker::User,
                    text: "hello there".into(),
                    image_ids: vec![],
                },
                Turn {
                    speaker: Speaker::Agent,
                    text: "welcome to the shop".into(),
                    image_ids: vec![],
                },
            ],
        };
        let examples = extract_examples(&t, 5, ExtractionMode::Aggregated).unwrap();
        assert_eq!(examples.len(), 1);
        let ex = &examples[0];
        assert_eq!(ex.context.len(), 5);
        for pad in &ex.context[..4] {
            assert_eq!(pad, &ContextTurn::default());
        }
        assert_eq!(ex.context[4].tokens, vec!["hello", "there"]);
    }

    #[test]
    fn context_never_includes_the_target_or_later_turns() {
        let mut turns = Vec::new();
        for i in 0..6 {
            turns.push(Turn {
                speaker: if i % 2 == 0 { Speaker::User } else { Speaker::Agent },
                text: format!("marker{i}"),
                image_ids: vec![],
            });
        }
        let t = DialogueTranscript {
            session_id: "s".into(),
            turns,
        };
        for ex in extract_examples(&t, 4, ExtractionMode::Aggregated).unwrap() {
            let target_marker = format!("marker{}", ex.target_turn);
            for turn in &ex.context {
                for token in &turn.tokens {
                    assert_ne!(token, &target_marker);
                    let idx: usize = token.strip_prefix("marker").unwrap().parse().unwrap();
                    assert!(idx < ex.target_turn);
                }
            }
        }
    }

    #[test]
    fn image_only_agent_turns_stay_in_context_but_never_become_targets() {
        let t = DialogueTranscript {
            session_id: "s".into(),
            turns: vec![
                Turn {
                    speaker: Speaker::User,
                    text: "show me hats".into(),
                    image_ids: vec![],
                },
                Turn {
                    speaker: Speaker::Agent,
                    text: String::new(),
                    image_ids: vec!["a".into(), "b".into()],
                },
                Turn {
                    speaker: Speaker::Agent,
                    text: "here are some hats".into(),
                    image_ids: vec![],
                },
            ],
        };
        let examples = extract_examples(&t, 2, ExtractionMode::Aggregated).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].target_turn, 2);
        assert_eq!(examples[0].context[1].image_ids, vec!["a", "b"]);
        assert!(examples[0].context[1].tokens.is_empty());
    }

    #[test]
    fn extraction_is_pure() {
        let session = catalogue_session();
        let a = extract_examples(&session, 3, ExtractionMode::Aggregated).unwrap();
        let b = extract_examples(&session, 3, ExtractionMode::Aggregated).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_transcripts_name_session_and_turn() {
        let t = DialogueTranscript {
            session_id: "broken".into(),
            turns: vec![Turn {
                speaker: Speaker::User,
                text: "hi".into(),
                image_ids: vec![String::new()],
            }],
        };
        let err = extract_examples(&t, 2, ExtractionMode::Aggregated).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("broken") && msg.contains('0'), "{msg}");

        let empty = DialogueTranscript {
            session_id: "empty".into(),
            turns: vec![],
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn transcripts_roundtrip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let sessions = vec![catalogue_session(), {
            let mut s = catalogue_session();
            s.session_id = "second".into();
            s
        }];
        save_transcripts(&path, &sessions).unwrap();
        assert_eq!(load_transcripts(&path).unwrap(), sessions);
    }

    #[test]
    fn transcript_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"session_id\": \"ok\", \"turns\": [{\"speaker\": \"user\"}]}\nnot json\n").unwrap();
        let err = load_transcripts(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn encoding_maps_unknowns_to_unk_and_missing_features_to_zeros() {
        let vocabulary = Vocabulary::build(
            [vec!["hello".to_string(), "shop".to_string()]].iter(),
            1,
        );
        let mut store = FeatureStore::new(3);
        store.insert("known".into(), vec![1.0, 2.0, 3.0]).unwrap();
        let example = ExtractedExample {
            session_id: "s".into(),
            target_turn: 1,
            context: vec![ContextTurn {
                tokens: vec!["hello".into(), "martian".into()],
                image_ids: vec!["known".into(), "missing".into()],
            }],
            target_tokens: vec!["shop".into()],
        };
        let encoded = encode_examples(&[example], &vocabulary, &store, 5);
        let turn = &encoded[0].context[0];
        assert_eq!(turn.token_ids[0], vocabulary.id("hello").unwrap());
        assert_eq!(turn.token_ids[1], crate::model::UNK_ID);
        assert_eq!(turn.image_rows[0], vec![1.0, 2.0, 3.0]);
        assert_eq!(turn.image_rows[1], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn batching_preserves_examples_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let examples: Vec<EncodedExample> = (0..7)
            .map(|i| EncodedExample {
                context: (0..2)
                    .map(|_| EncodedTurn {
                        token_ids: (0..rng.random_range(1..4)).map(|_| rng.random_range(0..20)).collect(),
                        image_rows: vec![],
                    })
                    .collect(),
                target_ids: vec![i, i + 1],
            })
            .collect();
        let batches = make_batches(&examples, 3).unwrap();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[0].batch_size(), 3);
        assert_eq!(batches[2].batch_size(), 1);
        assert_eq!(batches[1].targets[0], examples[3].target_ids);
        assert_eq!(
            batches[1].turns[1].tokens[2],
            examples[5].context[1].token_ids
        );
    }

    #[test]
    fn session_split_covers_the_corpus_without_overlap() {
        let (sessions, _) = synthesize_corpus(3, 100, CorpusStyle::TextDriven, 4).unwrap();
        let (train, valid, test) = split_sessions(&sessions, 5);
        assert_eq!(train.len(), 80);
        assert_eq!(valid.len(), 10);
        assert_eq!(test.len(), 10);
        let mut ids: Vec<&str> = train
            .iter()
            .chain(&valid)
            .chain(&test)
            .map(|s| s.session_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);

        let again = split_sessions(&sessions, 5);
        assert_eq!((train, valid, test), again);

        let (other_train, ..) = split_sessions(&sessions, 6);
        assert_ne!(again.0, other_train);
    }

    #[test]
    fn tiny_corpora_put_every_session_in_train() {
        let (sessions, _) = synthesize_corpus(4, 9, CorpusStyle::TextDriven, 4).unwrap();
        let (train, valid, test) = split_sessions(&sessions, 0);
        assert_eq!(train.len(), 9);
        assert!(valid.is_empty());
        assert!(test.is_empty());
    }

    proptest! {
        #[test]
        fn round_trip_reproduces_in_vocab_text(words in proptest::collection::vec("[a-z]{1,6}", 1..12)) {
            let vocabulary = Vocabulary::build([words.clone()].iter(), 1);
            let ids = vocabulary.encode(&words);
            let decoded = vocabulary.decode(&ids).unwrap();
            prop_assert_eq!(decoded, words);
        }

        #[test]
        fn tokenize_emits_no_whitespace_and_rejoins_consistently(s in "[ a-z0-9',!?.]{0,40}") {
            let tokens = tokenize(&s);
            for t in &tokens {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
            let rejoined = tokens.join(" ");
            prop_assert_eq!(tokenize(&rejoined), tokens);
        }
    }
}
